//! Annotation, distillation into a regression head, and scoring.

pub mod annotate;
pub mod features;
pub mod labels;
pub mod model;
pub mod prompt;
pub mod train;

pub use annotate::{
    annotate_corpus, AnnotateConfig, AnnotationOutcome, Annotator, AnnotatorError, HttpAnnotator,
    MockAnnotator, QuarantineEntry, ENV_MODEL, ENV_TOKEN, ENV_URL,
};
pub use features::{extract_features, hashed_ngram_features, Backbone, FeatureExtractor, SparseVector, DEFAULT_HASH_DIM};
pub use labels::{
    agreement_rate, join_annotations, read_labeled, split_train_test, write_labeled, Agreement,
    LabeledDoc, DEFAULT_TEST_FRACTION,
};
pub use model::{binarize, predict_score, Label, Prediction, QualityModel, Scorer, TrainingMeta};
pub use prompt::{build_annotation_request, parse_score, AnnotationPrompt, AnnotationRequest};
pub use train::{
    head_loss_and_grad, save_curves, train_regressor, train_with_backbone, Optimizer, TrainConfig, TrainOutcome,
    TrainingCurve,
};

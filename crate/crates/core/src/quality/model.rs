//! Regression-head model, its on-disk format, and scoring.
//!
//! A model file is one JSON header line followed by the raw weight payload:
//! `dim` little-endian f64 values. The header records the format version,
//! the full extractor spec (kind, dimension, seed, n-gram sizes), the bias,
//! the binarization threshold and training metadata. Loading checks every
//! piece of it against the payload.

use std::io::{BufRead, Read};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::{atomic_write, open_reader, Document};

use super::features::{Backbone, FeatureExtractor, SparseVector};

const FORMAT: &str = "webcurate-quality-model";
const FORMAT_VERSION: u32 = 1;

/// Positive-class threshold on the 0-5 scale.
pub const DEFAULT_THRESHOLD: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Positive,
    Negative,
}

/// Positive iff `score >= threshold`.
pub fn binarize(score: f64, threshold: f64) -> Label {
    if score >= threshold {
        Label::Positive
    } else {
        Label::Negative
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub learning_rate: f64,
    pub best_epoch: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub optimizer: String,
    pub train_size: usize,
    pub val_size: usize,
    pub val_macro_f1: Option<f64>,
    pub val_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualityModel {
    pub extractor: FeatureExtractor,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub threshold: f64,
    pub training_meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    extractor: FeatureExtractor,
    dim: usize,
    bias: f64,
    threshold: f64,
    training_meta: TrainingMeta,
}

impl QualityModel {
    /// Constant model: every document scores `bias`.
    pub fn constant(extractor: FeatureExtractor, bias: f64) -> Self {
        let dim = extractor.dim();
        QualityModel {
            extractor,
            weights: vec![0.0; dim],
            bias,
            threshold: DEFAULT_THRESHOLD,
            training_meta: TrainingMeta::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.extractor.dim() {
            return Err(Error::InvalidInput(format!(
                "model has {} weights but extractor dimension {}",
                self.weights.len(),
                self.extractor.dim()
            )));
        }
        if !(0.0..=5.0).contains(&self.threshold) {
            return Err(Error::InvalidInput(format!(
                "threshold {} outside [0, 5]",
                self.threshold
            )));
        }
        Ok(())
    }

    /// `w . x + b` on an already-extracted feature vector.
    pub fn raw_score(&self, x: &SparseVector) -> f64 {
        x.dot(&self.weights) + self.bias
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        let header = Header {
            format: FORMAT.to_owned(),
            version: FORMAT_VERSION,
            extractor: self.extractor.clone(),
            dim: self.weights.len(),
            bias: self.bias,
            threshold: self.threshold,
            training_meta: self.training_meta.clone(),
        };
        let header = serde_json::to_string(&header)?;
        atomic_write(path.as_ref(), |w| {
            w.write_all(header.as_bytes())?;
            w.write_all(b"\n")?;
            let mut buf = Vec::with_capacity(self.weights.len() * 8);
            for v in &self.weights {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bad = |message: String| Error::ModelFormat {
            path: path.to_path_buf(),
            message,
        };
        let mut r = open_reader(path)?;
        let mut line = Vec::new();
        r.read_until(b'\n', &mut line).map_err(|e| Error::io(path, e))?;
        let header: Header = serde_json::from_slice(&line)
            .map_err(|e| bad(format!("unreadable header: {e}")))?;
        if header.format != FORMAT {
            return Err(bad(format!("unknown format {:?}", header.format)));
        }
        if header.version != FORMAT_VERSION {
            return Err(bad(format!(
                "format version {} (this build reads {FORMAT_VERSION})",
                header.version
            )));
        }
        if header.dim != header.extractor.dim() {
            return Err(bad(format!(
                "header dim {} disagrees with extractor dim {}",
                header.dim,
                header.extractor.dim()
            )));
        }
        let mut payload = Vec::new();
        r.read_to_end(&mut payload).map_err(|e| Error::io(path, e))?;
        if payload.len() != header.dim * 8 {
            return Err(bad(format!(
                "payload is {} bytes, expected {} for dim {}",
                payload.len(),
                header.dim * 8,
                header.dim
            )));
        }
        let weights = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let model = QualityModel {
            extractor: header.extractor,
            weights,
            bias: header.bias,
            threshold: header.threshold,
            training_meta: header.training_meta,
        };
        model.validate().map_err(|e| bad(e.to_string()))?;
        Ok(model)
    }

    /// Loads a model and fails unless its extractor equals `expected`.
    pub fn load_expecting(path: impl AsRef<Path>, expected: &FeatureExtractor) -> Result<Self> {
        let path = path.as_ref();
        let m = Self::load(path)?;
        if &m.extractor != expected {
            return Err(Error::ModelFormat {
                path: path.to_path_buf(),
                message: format!(
                    "extractor {:?} does not match expected {:?}",
                    m.extractor, expected
                ),
            });
        }
        Ok(m)
    }
}

/// A model's score for one document.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    /// `w . x + b`, used for threshold comparisons.
    pub raw: f64,
    /// `raw` clamped to [0, 5], for reporting.
    pub clamped: f64,
}

impl Prediction {
    fn new(raw: f64) -> Self {
        Prediction {
            raw,
            clamped: raw.clamp(0.0, 5.0),
        }
    }
}

/// A model bound to a loaded backbone. Cheap to clone and share.
#[derive(Debug, Clone)]
pub struct Scorer {
    model: Arc<QualityModel>,
    backbone: Arc<Backbone>,
}

impl Scorer {
    /// Binds `model` to the backbone described by its own extractor spec.
    pub fn new(model: QualityModel) -> Result<Self> {
        let backbone = Backbone::load(&model.extractor)?;
        Self::with_backbone(model, Arc::new(backbone))
    }

    /// Binds `model` to an explicitly supplied backbone, e.g. embeddings for a
    /// different document set.
    pub fn with_backbone(model: QualityModel, backbone: Arc<Backbone>) -> Result<Self> {
        model.validate()?;
        if !backbone.compatible_with(&model.extractor) {
            return Err(Error::InvalidInput(format!(
                "backbone (dim {}) is incompatible with model extractor {:?}",
                backbone.dim(),
                model.extractor
            )));
        }
        Ok(Scorer {
            model: Arc::new(model),
            backbone,
        })
    }

    pub fn model(&self) -> &QualityModel {
        &self.model
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn threshold(&self) -> f64 {
        self.model.threshold
    }

    pub fn score(&self, doc: &Document) -> Result<Prediction> {
        let x = self.backbone.features(doc)?;
        Ok(Prediction::new(self.model.raw_score(&x)))
    }

    /// Scores many documents; identical to scoring them one by one.
    pub fn score_batch(&self, docs: &[Document]) -> Result<Vec<Prediction>> {
        use rayon::prelude::*;
        docs.par_iter().map(|d| self.score(d)).collect()
    }
}

pub fn predict_score(scorer: &Scorer, doc: &Document) -> Result<Prediction> {
    scorer.score(doc)
}

use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// Text produced no shingles or features to work with.
    #[error("empty_document")]
    EmptyDocument,

    #[error("incompatible_signatures: {0}")]
    IncompatibleSignatures(String),

    #[error("unparseable_score")]
    UnparseableScore,

    #[error("missing_embedding: {0}")]
    MissingEmbedding(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("model file {path}: {message}")]
    ModelFormat { path: PathBuf, message: String },

    #[error("signature cache {path}: {message}")]
    CacheFormat { path: PathBuf, message: String },

    #[error("annotator endpoint failed after {attempts} attempt(s): {message}")]
    Annotator { attempts: u32, message: String },

    #[error("non-finite training loss at lr={learning_rate} epoch={epoch} batch={batch}")]
    NonFiniteLoss {
        learning_rate: f64,
        epoch: usize,
        batch: usize,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used for exit codes and reject files.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Record { .. } => "malformed_record",
            Error::EmptyDocument => "empty_document",
            Error::IncompatibleSignatures(_) => "incompatible_signatures",
            Error::UnparseableScore => "unparseable_score",
            Error::MissingEmbedding(_) => "missing_embedding",
            Error::InvalidInput(_) => "invalid_input",
            Error::Config(_) => "invalid_config",
            Error::ModelFormat { .. } => "model_format",
            Error::CacheFormat { .. } => "cache_format",
            Error::Annotator { .. } => "annotator_unreachable",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Json(_) => "json",
        }
    }
}

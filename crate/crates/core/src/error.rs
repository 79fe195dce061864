use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to load {path}: {reason}")]
    Load { path: PathBuf, reason: String },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("face detection failed: {0}")]
    Detection(String),

    #[error("cannot resample: {0}")]
    Resample(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("decomposition failed: {0}")]
    Decomposition(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("loss became non-finite (lr {lr}, epoch {epoch}, batch {batch})")]
    NonFiniteLoss { lr: f64, epoch: usize, batch: usize },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("insufficient peaks: found {found}, need at least 2")]
    InsufficientPeaks { found: usize },

    #[error("training fold contains a single class")]
    SingleClass,

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn load(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::Load {
            path: path.into(),
            reason: reason.to_string(),
        }
    }
}

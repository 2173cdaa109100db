use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("cannot split dataset: {0}")]
    Split(String),

    #[error("insufficient data: need at least {needed} days, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("cluster {0} has no members")]
    EmptyCluster(usize),

    #[error("model parameters are not finite")]
    ModelCorrupt,

    #[error("training diverged at step {step}: loss is not finite")]
    Diverged { step: usize },

    #[error("evaluation failed: {0}")]
    Evaluation(String),

    #[error("layout version mismatch: artifact has {found}, expected {expected}")]
    LayoutVersion { found: String, expected: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

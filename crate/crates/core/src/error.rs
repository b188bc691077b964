use std::path::PathBuf;

use thiserror::Error;

use crate::dataset::Triple;

pub type Result<T, E = KgeError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum KgeError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("singular operator: |det A| = {det:e} is below tolerance {tolerance:e}")]
    SingularOperator { det: f64, tolerance: f64 },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("unknown {kind} `{name}`; nearest: {}", suggestions.join(", "))]
    Lookup {
        kind: &'static str,
        name: String,
        suggestions: Vec<String>,
    },

    #[error("non-finite loss {loss} at step {step} (triple {triple:?})")]
    NonFiniteLoss { step: u64, loss: f64, triple: Triple },

    #[error("checkpoint: bad magic {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 8], expected: [u8; 8] },

    #[error("checkpoint: unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("checkpoint: truncated while reading `{array}` (expected {expected} values)")]
    Truncated { array: String, expected: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("dataset hash mismatch: checkpoint {checkpoint}, dataset {dataset}")]
    HashMismatch { checkpoint: String, dataset: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl KgeError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        KgeError::InvalidArgument(msg.into())
    }
}

use thiserror::Error;

pub type Result<T> = std::result::Result<T, AtroError>;

#[derive(Debug, Error)]
pub enum AtroError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    /// A configuration value violates its invariant; `path` names the field (e.g. `train.c`).
    #[error("{path} {msg}")]
    InvalidConfig { path: String, msg: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at step {step} (learning rate {rate:e})")]
    Diverged { step: usize, rate: f64 },

    #[error("size limit exceeded: {0}")]
    SizeLimit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl AtroError {
    pub fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        AtroError::InvalidConfig {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Config errors and numeric failures map to different process exit codes.
    pub fn is_numeric(&self) -> bool {
        matches!(self, AtroError::NonFinite(_) | AtroError::Diverged { .. })
    }
}

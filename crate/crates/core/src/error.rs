use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate scale for series `{0}`: zero variance or too few observations")]
    DegenerateScale(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("innovation covariance not invertible at period {period}")]
    Conditioning { period: usize },

    #[error("degenerate coordinate update at {0}")]
    DegenerateUpdate(String),

    #[error("refusing non-causal parameters: {0}")]
    NonCausal(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("hyperparameter selection failed: {0}")]
    Selection(String),

    #[error("ensemble construction failed: {0}")]
    Ensemble(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for this error: 1 for configuration/input problems,
    /// 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_)
            | Error::Conditioning { .. }
            | Error::DegenerateUpdate(_)
            | Error::NonCausal(_)
            | Error::Selection(_)
            | Error::Ensemble(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

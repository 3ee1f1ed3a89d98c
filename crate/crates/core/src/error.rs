use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("input shape mismatch: {0}")]
    InputShape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("kernel matrix is ill-conditioned: Cholesky failed with relative jitter up to {max_jitter:e}")]
    IllConditioned { max_jitter: f64 },

    #[error("value {value} outside domain {domain}")]
    Domain { value: f64, domain: &'static str },

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("calibration failed: target correlation {target} unreachable (best achieved {best})")]
    Calibration { target: f64, best: f64 },

    #[error("training failed on all {} restarts: {}", .diagnostics.len(), .diagnostics.join("; "))]
    TrainingFailed { diagnostics: Vec<String> },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::InputShape(msg.into())
    }
}

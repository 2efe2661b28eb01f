use thiserror::Error;

/// Errors raised across the simulation and analysis layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("total dimension {dim} exceeds capacity {cap}")]
    Capacity { dim: usize, cap: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("subsystem index {index} out of range for {len} subsystems")]
    Index { index: usize, len: usize },
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParam { field: String, reason: String },
    #[error("target out of range: {0}")]
    Range(String),
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("integrator failure at t = {t:.6e} s: {reason}")]
    Integrator { t: f64, reason: String },
    #[error("layout error: {0}")]
    Layout(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("ill-conditioned input: {0}")]
    Conditioning(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

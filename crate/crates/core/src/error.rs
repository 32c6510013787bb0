use thiserror::Error;

/// Errors raised across the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or parameters.
    #[error("config error: {0}")]
    Config(String),
    /// Arguments outside the domain of an operation (point outside the space, grid mismatch, empty event).
    #[error("domain error: {0}")]
    Domain(String),
    /// The Gibbs ensemble is not normalizable (negative temperature past the integrability threshold).
    #[error("stability failure: {0}")]
    Stability(String),
    /// Exact enumeration would exceed its size budget.
    #[error("size error: {0}")]
    Size(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

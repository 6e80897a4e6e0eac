//! Error type shared by every module.

use thiserror::Error;

/// Failure modes of the lab.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Incompatible vector or matrix dimensions.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// A parameter outside its admissible range.
    #[error("invalid parameter `{field}`: {reason}")]
    Parameter { field: String, reason: String },
    /// Data outside the support of the model (negative Poisson counts, zero gamma mean, ...).
    #[error("domain error: {0}")]
    Domain(String),
    /// The requested combination is not supported.
    #[error("unsupported: {0}")]
    Capability(String),
    /// Non-finite loss or parameters during training.
    #[error("diverged: {0}")]
    Divergence(String),
    /// Filesystem or serialization failure.
    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub fn param(field: &str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

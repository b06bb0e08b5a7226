//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any part of the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A series or dataset violates a structural invariant.
    #[error("invalid series: {0}")]
    InvalidSeries(String),

    /// An operation parameter is outside its documented range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Two shapes that must agree do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A loss or gradient became non-finite; the offending step was rejected.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A metric ratio has an undefined or unstable denominator.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// A data file failed to parse; carries row-level context where known.
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}

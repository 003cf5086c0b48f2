//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by any stage of the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed or unsupported file contents (bad magic, truncated payload,
    /// header fields out of range).
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// Arguments violate an operation's preconditions.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Shapes or dimensions disagree (image vs mask, params vs config, ...).
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A numeric invariant broke: divergence, non-finite gradient, zero norm.
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format { path: path.into(), reason: reason.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed on-disk data (bad magic, truncated payload, ...).
    #[error("format error in {path:?} at byte {offset}: {reason}")]
    Format {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    /// Incompatible tensor/image shapes.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Invalid parameter value (out of range, non-positive, ...).
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Invalid or unknown configuration key/value.
    #[error("config error: {0}")]
    Config(String),

    /// Checkpoint missing required entries or malformed.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Directory listings do not match (paired evaluation).
    #[error("listing error: {0}")]
    Listing(String),

    /// Runtime abort (NaN loss, diverged step, ...).
    #[error("runtime abort: {0}")]
    Runtime(String),

    #[error("io error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

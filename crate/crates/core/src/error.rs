//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by rendering, estimation and I/O operations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported image {path}: {reason}")]
    UnsupportedImage { path: PathBuf, reason: String },

    #[error("malformed depth map {path}: {reason}")]
    DepthFormat { path: PathBuf, reason: String },

    #[error("dimension mismatch: expected {expected_w}x{expected_h}, got {got_w}x{got_h}")]
    DimensionMismatch {
        expected_w: usize,
        expected_h: usize,
        got_w: usize,
        got_h: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("non-finite loss at {context}")]
    NonFiniteLoss { context: String },

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(ew: usize, eh: usize, gw: usize, gh: usize) -> Self {
        Error::DimensionMismatch {
            expected_w: ew,
            expected_h: eh,
            got_w: gw,
            got_h: gh,
        }
    }
}

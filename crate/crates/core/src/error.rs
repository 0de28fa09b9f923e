use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors produced by the adaptation toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed volume file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("{0} non-finite value(s) in input")]
    NonFinite(usize),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("index {index} out of range for {len} slices")]
    OutOfRange { index: usize, len: usize },

    #[error("predictor failed on slice {slice}: {source}")]
    Predictor {
        slice: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse error class, stable across versions and serializable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    /// Bad parameters or unusable (empty, out-of-range) input.
    Invalid,
    /// Unreadable, unwritable or malformed files and data.
    Io,
    /// Incompatible volume or plane shapes.
    Shape,
    /// A broken internal invariant.
    Internal,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidParam(_) | Error::Empty(_) | Error::OutOfRange { .. } => ErrorKind::Invalid,
            Error::Io { .. } | Error::Format { .. } | Error::NonFinite(_) => ErrorKind::Io,
            Error::ShapeMismatch { .. } => ErrorKind::Shape,
            Error::Invariant(_) => ErrorKind::Internal,
            Error::Predictor { source, .. } => source.kind(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn shapes(left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}

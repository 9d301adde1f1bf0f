use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the hazemix library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(PathBuf),
    #[error("corrupt image data in {path}: {reason}")]
    CorruptImage { path: PathBuf, reason: String },
    #[error("malformed sidecar {path}: {reason}")]
    Sidecar { path: PathBuf, reason: String },
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("empty image")]
    EmptyImage,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// True for failures caused by files (missing, unreadable, undecodable)
    /// rather than by bad argument values.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Read { .. }
                | Error::Write { .. }
                | Error::UnsupportedFormat(_)
                | Error::CorruptImage { .. }
                | Error::Sidecar { .. }
        )
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

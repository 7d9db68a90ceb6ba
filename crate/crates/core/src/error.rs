use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error(transparent)]
    Pgm(#[from] PgmError),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("config error in field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },

    #[error("image `{0}` has no paired prediction or ground truth")]
    MissingPair(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failures while decoding a binary PGM (P5) file.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PgmError {
    #[error("unsupported format `{magic}` at byte 0 (only binary P5 is accepted)")]
    UnsupportedFormat { magic: String },

    #[error("malformed header at byte {offset}: {reason}")]
    MalformedHeader { offset: usize, reason: String },

    #[error("truncated payload at byte {offset}: expected {expected} pixel bytes, found {found}")]
    Truncated {
        offset: usize,
        expected: usize,
        found: usize,
    },
}

/// Failures while decoding a checkpoint container.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes")]
    BadMagic,

    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u8),

    #[error("checksum mismatch")]
    ChecksumMismatch,

    #[error("truncated checkpoint at byte {0}")]
    Truncated(usize),

    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    #[error("layer mismatch: checkpoint has {found:?}, spec expects {expected:?}")]
    LayerMismatch { expected: Vec<String>, found: Vec<String> },
}

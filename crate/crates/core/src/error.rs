//! Error taxonomy shared by the whole crate.
//!
//! `Config` covers anything a caller could have prevented (bad shapes are split
//! out as `Shape` because they are the most common kind), `Numeric` covers
//! failures that only show up at run time (non-finite loss, singular solve).
//! The CLI maps `Numeric` to exit code 2 and everything else to 1.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("snapshot: {0}")]
    Snapshot(#[from] SnapshotError),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

/// Failures while reading a tensor snapshot, split per field so callers can
/// tell a wrong file apart from a damaged one.
#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("bad magic {0:?}, expected \"CDNT\"")]
    BadMagic([u8; 4]),

    #[error("unsupported snapshot version {0}")]
    UnsupportedVersion(u8),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("header truncated while reading {0}")]
    HeaderTruncated(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}

//! Error taxonomy shared by every module in the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents do not line up (elementwise mismatch, bad axis,
    /// matmul inner extent, ...).
    #[error("shape error: {0}")]
    Shape(String),

    /// Input outside the mathematical domain of the operation
    /// (log of a non-positive value, non-finite evaluation, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Degenerate numeric input: an all-zero row where a nonzero
    /// infinity norm is required, or a collapsed batch.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A caller broke an API contract (non-scalar loss, label out of
    /// range, misaligned parameter/gradient lists).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid configuration value.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed external data (dataset files, images).
    #[error("format error: {0}")]
    Format(String),

    /// Checkpoint checksum mismatch or truncation.
    #[error("integrity error: {0}")]
    Integrity(String),

    /// Checkpoint written by an incompatible format version.
    #[error("version error: expected format v{expected}, found v{found}")]
    Version { expected: u32, found: u32 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
    pub fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
    pub fn integrity(msg: impl Into<String>) -> Self {
        Error::Integrity(msg.into())
    }
}

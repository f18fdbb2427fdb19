//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input data (bad line in a TSV, bad bundle file, ...).
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Input produced no usable data (empty log, everything filtered out).
    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    /// Invalid configuration value or combination.
    #[error("config error: {0}")]
    Config(String),

    /// Tensor/graph shape mismatch.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An index referenced something outside its valid range.
    #[error("index out of range: {0}")]
    IndexRange(String),

    /// A non-finite value showed up where the math requires finite ones.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Malformed or inconsistent checkpoint file.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// The finite-difference gradient check could not run or did not pass.
    #[error("gradient check: {0}")]
    GradCheck(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("sequence of length {len} exceeds max context {max}")]
    ContextOverflow { len: usize, max: usize },

    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    Vocab { id: u32, vocab: usize },

    #[error("non-deterministic objective: {first} != {second}")]
    Determinism { first: f64, second: f64 },

    #[error("oracle input: {0}")]
    OracleInput(String),

    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),

    #[error("plan: {0}")]
    Plan(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("io: {0}")]
    Io(#[from] io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Distinct failure classes when reading a checkpoint file.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("truncated payload while reading {0}")]
    Truncated(&'static str),

    #[error("corrupt header: {0}")]
    Corrupt(String),

    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
}

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

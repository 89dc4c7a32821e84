use std::io;

/// Errors produced anywhere in the training pipeline.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("line {line}: {what} {value} out of range (max {max})")]
    Bounds {
        line: usize,
        what: &'static str,
        value: u64,
        max: u64,
    },

    /// A worker or the store broke the block ownership protocol.
    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("stale round: block {block} is at version {version}, request was for round {round}")]
    StaleRound { block: u32, version: u64, round: u64 },

    #[error("shape mismatch: expected length {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed payload: {0}")]
    Wire(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

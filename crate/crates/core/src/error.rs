use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("sketch spec mismatch: expected {expected}, found {found}")]
    SpecMismatch { expected: String, found: String },

    #[error("corrupt header in {path}: {reason}")]
    CorruptHeader { path: String, reason: String },

    #[error("checksum mismatch for record {source_id} at offset {offset}")]
    Checksum { source_id: String, offset: u64 },

    #[error("conflicting record for {0}: stored bytes differ")]
    Conflict(String),

    #[error("gradient budget exceeded: {needed} values > budget {budget}")]
    BudgetExceeded { needed: u64, budget: u64 },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}

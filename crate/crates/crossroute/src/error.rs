//! Crate-wide error type.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates a precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An operation was invoked in a state where it is undefined
    /// (e.g. softmax over a fully masked row, backward before forward).
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// Array shapes do not agree.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// The exhaustive oracle refuses instances it cannot enumerate.
    #[error("oracle size exceeded: {n} customers > {max} supported")]
    OracleSizeExceeded { n: usize, max: usize },

    /// A benchmark or dataset file could not be parsed.
    #[error("parse error{}: {msg}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse { msg: String, line: Option<usize> },

    /// Checkpoint payload failed hash verification or is malformed.
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    /// Checkpoint exists but does not match the target model.
    #[error("checkpoint incompatible: {0}")]
    CheckpointIncompatible(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid_argument(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn invalid_state(msg: impl Into<String>) -> Self {
        Error::InvalidState(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub fn parse(msg: impl Into<String>, line: Option<usize>) -> Self {
        Error::Parse { msg: msg.into(), line }
    }

    /// Process exit code for the CLI: 2 for data errors, 3 for checkpoint errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::CorruptCheckpoint(_) | Error::CheckpointIncompatible(_) => 3,
            _ => 2,
        }
    }
}

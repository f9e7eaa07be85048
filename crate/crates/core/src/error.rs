use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the allocation model, the learners and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("link `{0}` has zero rate; allocation is outside the model contract")]
    DegenerateLink(&'static str),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("empty batch")]
    EmptyBatch,

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("{path}:{line}: parse error: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("{path}:{line}: unknown key `{key}`")]
    UnknownKey {
        path: String,
        line: usize,
        key: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("missing checkpoint: {}", .0.display())]
    MissingCheckpoint(PathBuf),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

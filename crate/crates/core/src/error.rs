use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("step {step} is past the episode horizon {horizon}")]
    HorizonExceeded { step: usize, horizon: usize },

    #[error("reset rejected {0} samples; separation constraints cannot be met")]
    ResetRejected(usize),

    #[error("episode has no steps")]
    EmptyEpisode,

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("training halted at epoch {epoch}: {source}")]
    Halted {
        epoch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("gram matrix is ill-conditioned (jitter escalated to {jitter:e} without success)")]
    IllConditionedGram { jitter: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("simulation blew up at step {step}")]
    SimulationBlowup { step: usize },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed log {path}: {message}")]
    Log { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

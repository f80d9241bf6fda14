use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid device: {0}")]
    InvalidDevice(String),

    #[error("state dimension {dim} exceeds the configured capacity {cap}")]
    Capacity { dim: usize, cap: usize },

    #[error("degenerate dressed assignment between bare labels {first} and {second}")]
    Degeneracy { first: String, second: String },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("time {t} ns lies outside [0, {duration}] ns")]
    TimeOutOfRange { t: f64, duration: f64 },

    #[error("projection onto the computational subspace is singular (weight {weight:e})")]
    SingularProjection { weight: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("objective returned a non-finite value at parameters {point:?}")]
    NonFinite { point: Vec<f64> },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

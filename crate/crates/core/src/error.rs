use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("{path}:{line}: {msg}")]
    ModelFormat {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("size mismatch: {0}")]
    Size(String),

    #[error("configuration failed at radius {radius}: {msg}")]
    Configuration { radius: f64, msg: String },

    #[error("benchmark failed: {0}")]
    Bench(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

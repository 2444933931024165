use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed arguments to an operation (bad index, shape mismatch, ...).
    #[error("input error: {0}")]
    Input(String),

    /// Invalid hyperparameter or experiment configuration.
    #[error("config error: {0}")]
    Config(String),

    /// A request exceeded a hard enumeration limit.
    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("ingestion error in {}:{line}: {msg}", file.display())]
    Ingestion {
        file: PathBuf,
        line: usize,
        msg: String,
    },

    /// A metric is mathematically undefined for the given inputs.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("malformed file {}: {msg}", file.display())]
    Format { file: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn ingestion(file: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Ingestion {
            file: file.into(),
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn format(file: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            file: file.into(),
            msg: msg.into(),
        }
    }
}

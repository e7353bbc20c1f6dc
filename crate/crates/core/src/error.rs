use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid interval [{lo}, {hi}]: endpoints must be finite with lo <= hi")]
    InvalidInterval { lo: f64, hi: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unknown activation `{0}` (expected sigmoid, tanh, relu or identity)")]
    UnknownActivation(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate statistics: {0}")]
    DegenerateStatistics(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("{path}: column `{column}` not found in header")]
    MissingColumn { path: PathBuf, column: String },

    #[error("{path}: non-numeric value {value:?} in column `{column}` at data row {row}")]
    NonNumeric {
        path: PathBuf,
        column: String,
        row: usize,
        value: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    /// Errors caused by bad user input (configs, files, arguments) rather than
    /// by a numeric or runtime failure.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Diverged { .. } | Error::Serde(_))
            && !matches!(self, Error::Io { source, .. } if source.kind() != std::io::ErrorKind::NotFound)
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

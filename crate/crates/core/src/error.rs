use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid grid: {0}")]
    Validation(String),

    #[error("time series: {0}")]
    Series(String),

    #[error("unknown line id `{0}`")]
    UnknownLine(String),

    #[error("step {step} out of range (T = {len})")]
    StepOutOfRange { step: usize, len: usize },

    #[error("power flow: {0}")]
    PowerFlow(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("model: {0}")]
    Model(String),

    #[error("evaluation: {0}")]
    Eval(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

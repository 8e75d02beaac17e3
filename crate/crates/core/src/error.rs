use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the forecasting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Shape(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value produced by `{op}` from finite inputs")]
    NonFinite { op: &'static str },

    #[error("input too short: {0}")]
    InputTooShort(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("fold error: {0}")]
    Fold(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("training diverged at epoch {epoch}, step {step}: {msg}")]
    Divergence { epoch: usize, step: u64, msg: String },

    #[error("corrupt checkpoint at byte offset {offset}: {msg}")]
    CorruptCheckpoint { offset: u64, msg: String },

    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

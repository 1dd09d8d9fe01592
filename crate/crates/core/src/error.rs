use std::path::PathBuf;

use thiserror::Error;

use crate::kernels::KernelConfig;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("illegal kernel config {config}: {reason}")]
    Config { config: KernelConfig, reason: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("measurement of {config} failed: {reason}")]
    Measurement { config: KernelConfig, reason: String },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("code generation error: {0}")]
    Generation(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

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

    /// True for errors caused by malformed or inconsistent input data, as
    /// opposed to execution failures.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Validation(_)
                | Error::Lookup(_)
                | Error::Consistency(_)
                | Error::Format(_)
                | Error::Csv(_)
                | Error::Json(_)
                | Error::Shape(_)
        )
    }
}

use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("i/o error: {0}")]
    Stream(#[from] io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// Malformed or inconsistent input data.
    #[error("data error: {0}")]
    Data(String),

    /// Bad arguments or configuration.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("field `{field}`, row {row}: non-finite numeric value `{value}`")]
    NonFinite { field: String, row: usize, value: String },

    #[error("row {row}: malformed label `{label}` (expected 1 or 0)")]
    Label { row: usize, label: String },

    #[error("non-finite gradient in field {field} ({part})")]
    NonFiniteGradient { field: usize, part: &'static str },

    #[error("training diverged at epoch {epoch}; last good epoch: {}", last_good.map_or("none".to_string(), |e| e.to_string()))]
    Divergence { epoch: usize, last_good: Option<usize> },

    #[error("dense materialization of {elements} elements exceeds budget of {budget}")]
    Budget { elements: usize, budget: usize },

    #[error("bad model file: {0}")]
    Format(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    /// Process exit code for the CLI: 1 usage, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::NonFiniteGradient { .. } | Error::Divergence { .. } => 3,
            _ => 2,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration value is missing, mistyped or out of range.
    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    /// A tensor would exceed the configured memory budget.
    #[error("tensor of shape {shape:?} needs {bytes} bytes, budget is {budget} bytes")]
    Resource {
        shape: Vec<usize>,
        bytes: usize,
        budget: usize,
    },

    /// A statistical estimator was handed too little data.
    #[error("estimator error: {0}")]
    Estimator(String),

    /// Numerical failure inside a factorization.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("malformed container {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

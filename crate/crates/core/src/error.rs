use std::io;

use thiserror::Error;

/// Errors produced anywhere in the selection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Malformed input data. `row` is 1-based over data rows (the header is row 0).
    #[error("data error at row {row}, column {column}: {message}")]
    Data {
        row: usize,
        column: String,
        message: String,
    },

    #[error("data error: {0}")]
    DataShape(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("learner failed on feature subset {subset:?}: {source}")]
    Learner {
        subset: Vec<usize>,
        #[source]
        source: Box<Error>,
    },

    #[error("permutation {index} failed: {source}")]
    Permutation {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse failure category, used for exit codes and exception attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

impl Error {
    /// Category of the innermost cause.
    pub fn class(&self) -> ErrorClass {
        match self.root() {
            Error::InvalidConfig(_) | Error::InvalidArgument(_) | Error::Json(_) => ErrorClass::Config,
            Error::Data { .. } | Error::DataShape(_) | Error::Io(_) | Error::Csv(_) => ErrorClass::Data,
            _ => ErrorClass::Numerical,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Innermost cause, looking through the learner/permutation wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Learner { source, .. } | Error::Permutation { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },

    #[error("unknown operator `{0}`")]
    UnknownOperator(String),

    #[error("variable x{index} out of range (data has {n_features} feature column(s))")]
    VariableOutOfRange { index: usize, n_features: usize },

    #[error("no value supplied for parameter th{0}")]
    MissingParameter(u32),

    #[error("model has {k} parameters but only {n} observations")]
    OverParameterized { k: usize, n: usize },

    #[error("no restart produced a finite residual sum of squares")]
    Unfittable,

    #[error("degenerate fit: residual sum of squares is zero")]
    DegenerateFit,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("operator `{0}` has no prior hyperparameters")]
    MissingHyperparams(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
}

/// Coarse classification used to map failures onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Io,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::Io,
            Error::Unfittable | Error::DegenerateFit | Error::NonFinite(_) => ErrorKind::Numerical,
            _ => ErrorKind::Validation,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format { path: path.into(), msg: msg.into() }
    }
}

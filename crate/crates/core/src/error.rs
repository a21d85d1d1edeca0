use std::path::PathBuf;

use thiserror::Error;

use crate::losses::LossReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("insufficient pool: need {needed} samples, {available} available")]
    InsufficientPool { needed: usize, available: usize },

    #[error("missing target: {0}")]
    MissingTarget(String),

    #[error("config mismatch: expected {expected}, found {found}")]
    ConfigMismatch { expected: String, found: String },

    #[error("unsupported checkpoint version: expected {expected}, found {found}")]
    Version { expected: u32, found: u32 },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("non-finite loss at iteration {iteration}; last finite report: {last_finite:?}")]
    NonFiniteLoss { iteration: u64, last_finite: Option<Box<LossReport>> },

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed data in {context}: {message}")]
    Format { context: String, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Format { context: context.into(), message: message.to_string() }
    }

    /// Stable machine-readable code, shared with the HTTP error body.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) | Error::ConfigMismatch { .. } | Error::Format { .. } | Error::Json(_) => "invalid_argument",
            Error::InsufficientPool { .. } => "insufficient_pool",
            Error::MissingTarget(_) => "missing_target",
            Error::State(_) => "invalid_state",
            Error::Version { .. } => "version",
            Error::Numerical(_) | Error::NonFiniteLoss { .. } => "numerical",
            Error::Io { .. } => "io",
        }
    }
}

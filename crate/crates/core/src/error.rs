use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("invalid architecture at layer {layer}: {reason}")]
    InvalidArch { layer: usize, reason: String },

    #[error("parameter vector has length {found}, architecture needs {expected}")]
    ParamCount { expected: usize, found: usize },

    #[error("non-finite value produced by {0}")]
    NumericOverflow(&'static str),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("degenerate ensemble: {0}")]
    DegenerateEnsemble(&'static str),

    #[error("ensemble members do not share one architecture")]
    MixedEnsemble,

    #[error("invalid attack configuration: {0}")]
    AttackConfig(String),

    #[error("{key}: {reason}")]
    Config { key: String, reason: String },

    #[error("invalid protocol plan: {0}")]
    Plan(String),

    #[error("not enough examples: need {needed}, have {available}")]
    InsufficientData { needed: usize, available: usize },

    #[error("{path}: {reason}")]
    Parse { path: PathBuf, reason: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("round {round}, client {client}: {source}")]
    Client {
        round: usize,
        client: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

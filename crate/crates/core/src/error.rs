use thiserror::Error;

/// Errors raised by the simulation and analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("undefined value: {0}")]
    UndefinedValue(String),

    #[error("{n_atoms} atoms exceeds the exact-engine limit of {limit}; use the moment (gaussian) engine instead")]
    SizeLimit { n_atoms: usize, limit: usize },

    #[error("model error: {0}")]
    Model(String),

    #[error("incomplete dataset: {0}")]
    IncompleteDataset(String),

    #[error("calibration failure: {0}")]
    Calibration(String),

    #[error("integration error: {0}")]
    Integration(String),

    #[error("eigensolver did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

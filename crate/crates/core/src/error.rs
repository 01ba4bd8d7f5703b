use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the mechanisms, accountants, trainers and dataset IO.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The model error-rate estimator divides by `1 - 2*gamma_eps`, which
    /// vanishes at epsilon = 0.
    #[error("model error estimator undefined at gamma_eps = {gamma_eps}")]
    EstimatorUndefined { gamma_eps: f64 },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    TrainingDiverged { step: usize, loss: f64 },

    #[error("{path}:{line}: {reason}")]
    Load {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid_param(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

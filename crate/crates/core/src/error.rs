use std::path::PathBuf;

use gtfmn_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GtfmnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("non-finite value during training at step {step}; last good parameters saved to {checkpoint:?}")]
    NonFiniteLoss {
        step: usize,
        checkpoint: Option<PathBuf>,
    },

    #[error("optimizer step rejected: {0}")]
    Optimizer(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, GtfmnError>;

pub(crate) fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> GtfmnError {
    let context = context.into();
    move |source| GtfmnError::Io { context, source }
}

use thiserror::Error;

use crate::container::FormatError;
use crate::forest::ForestError;
use crate::nn::NnError;
use crate::preprocess::{DatasetError, PreprocessError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("training batch is empty")]
    EmptyBatch,
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
}

/// Any failure surfaced by the library's top-level entry points.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Nn(_) => "numeric",
            Error::Train(_) => "training",
            Error::Format(_) => "model_format",
            Error::Dataset(_) => "dataset",
            Error::Preprocess(_) => "preprocess",
            Error::Forest(_) => "forest",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Invalid(_) => "invalid_argument",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

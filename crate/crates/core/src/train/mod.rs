//! MNIST ingestion, Adam optimization of the capsule objective, evaluation.

pub mod adam;
mod engine;
pub mod mnist;

pub use adam::{optimizer_step, AdamConfig, AdamState};
pub use engine::{evaluate, train, train_with, EpochMetrics, EvalReport, Progress, TrainConfig, TrainReport, EVAL_BATCH};
pub use mnist::{load_mnist_idx, load_split, MnistDataset, Split};

use std::path::PathBuf;

use thiserror::Error;

use crate::model::ModelError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{file} file, offset {offset}: {detail}")]
    Format { file: &'static str, offset: usize, detail: String },
    #[error("inconsistent dataset: {0}")]
    Consistency(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid training option {key}: {detail}")]
    Config { key: &'static str, detail: String },
    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Divergence { epoch: usize, step: usize, detail: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

//! Explanations read off a forward pass: capsule likelihoods and poses,
//! relevance paths through the couplings, decoder sweeps, class scatter and
//! misclassification reconstructions.

pub mod image;
mod misclass;
mod relevance;
mod report;
mod scatter;
mod sweep;

pub use image::{render_image_grid, to_byte, GrayImage, GridLayout};
pub use misclass::{explain_misclassification, MisclassReport, MisclassSummary};
pub use relevance::{extract_relevance_path, relevance_path, weighted_vote_sum, BlockContribution, RelevanceEntry, RelevancePath};
pub use report::{capsule_report, CapsuleExplanationSet, CapsuleReport, Layer};
pub use scatter::{export_class_outputs, ScatterExport, ScatterRecord, CSV_HEADER};
pub use sweep::{perturbation_sweep, sweep_offsets, sweep_trace, SweepGrid, DEFAULT_HI, DEFAULT_LO, DEFAULT_STEP};

use thiserror::Error;

use crate::model::ModelError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("{op}: {detail}")]
    Contract { op: &'static str, detail: String },
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl ExplainError {
    pub(crate) fn contract(op: &'static str, detail: impl Into<String>) -> Self {
        ExplainError::Contract { op, detail: detail.into() }
    }
}

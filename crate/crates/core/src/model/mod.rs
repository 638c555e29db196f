//! Capsule network model: architecture, routing, losses and checkpoints.

mod capsnet;
pub mod checkpoint;
mod config;
pub mod loss;
pub mod routing;
pub mod squash;

pub use capsnet::{
    decoder_nodes, forward_nodes, loss_nodes, parameter_shapes, primary_capsules, CapsNet, CapsuleCoords, CapsuleLayout, DecodeTarget,
    ForwardNodes, ForwardTrace, LossNodes, PrimaryCapsuleOutput, ROUTING_WEIGHT,
};
pub use config::{parse_pairs, ConfigError, ModelConfig, NormAxis};
pub use routing::{route, ClassCapsuleOutput, CouplingMatrix, RoutingOutcome};
pub use squash::squash;

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("parameter set: {0}")]
    Parameters(String),
    #[error("tensor {tensor}: expected shape {expected:?}, found {found:?}")]
    Shape { tensor: String, expected: Vec<usize>, found: Vec<usize> },
}

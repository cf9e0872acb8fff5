//! Siamese multi-pipeline network with late fusion, built from a declarative
//! [`NetworkConfig`], plus its Euclidean loss and binary checkpoint format.

mod checkpoint;
mod config;
mod network;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{InputMode, Modality, NetworkConfig, PipelineInput, Preset, RoiName, REFERENCE_PAIRINGS};
pub use network::{Batch, FusionNetwork, LossGrad, ParamBlock};
pub(crate) use network::argmax;

use thiserror::Error;

use crate::layers::LayerError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("pipeline {pipeline}: expected input shape {expected:?}, got {got:?}")]
    PipelineShape {
        pipeline: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("expected {expected} pipeline inputs, got {got}")]
    PipelineCount { expected: usize, got: usize },
    #[error("label row {row} is not one-hot over {classes} classes")]
    NotOneHot { row: usize, classes: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("parameter vector has length {got}, network has {expected}")]
    ParamLength { expected: usize, got: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

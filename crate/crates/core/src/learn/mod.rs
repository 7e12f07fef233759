//! Networks, the trajectory policy, the optimizer and the training loop.

pub mod adam;
pub mod checkpoint;
pub mod mlp;
pub mod policy;
pub mod train;

use thiserror::Error;

use crate::ndp::NdpError;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use mlp::{Mlp, MlpShape};
pub use policy::{l1_loss, Policy, PolicyConfig, PolicyMode, PolicyOutput, Sample};
pub use train::{evaluate, train, train_phase, Metrics, Phase, TrainConfig, TrainReport};

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("dimension mismatch: {what} has length {got}, expected {expected}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("length mismatch: got {got}, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("empty dataset")]
    EmptySet,
    #[error("both training sets are empty")]
    EmptySets,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Ndp(#[from] NdpError),
}

//! Decoder-only transformer with exact analytic gradients.
//!
//! Pre-norm blocks, learned absolute positions, erf-form GELU, and an output
//! projection tied to the token embedding. Forward, backward, and scoring are
//! generic over [`crate::Scalar`]; checkpoints always store f32.

mod backward;
mod checkpoint;
mod config;
mod forward;
mod params;
mod scoring;

pub use backward::backward;
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::ModelConfig;
pub use forward::{forward, ForwardMode};
pub use params::{LayerParams, TransformerParams};
pub use scoring::{loss, sequence_logprob};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config ({field}): {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("empty batch")]
    EmptyBatch,

    #[error("batch row {row} has length {got}, other rows have {expected}")]
    RaggedBatch { row: usize, got: usize, expected: usize },

    #[error("sequence length {got} exceeds model maximum {max}")]
    SequenceTooLong { got: usize, max: usize },

    #[error("token id {id} out of range for vocab size {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },

    #[error("continuation must be non-empty")]
    EmptyContinuation,

    #[error("targets shape mismatch (got {got}, expected {expected})")]
    TargetShapeMismatch { got: usize, expected: usize },

    #[error("malformed checkpoint: {0}")]
    CheckpointFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

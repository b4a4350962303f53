//! Desk-scale laboratory for studying crosslingual structural priming in
//! tiny bilingual autoregressive language models.
//!
//! The crate covers the full pipeline: synthetic bilingual corpus generation,
//! byte-pair tokenization, decoder-only transformer training with exact
//! analytic gradients, per-checkpoint priming and minimal-pair evaluation,
//! and the paired-test / FDR statistics that decide significance.
//!
//! Core numerics are generic over the scalar type via [`Scalar`]; `f32` is
//! the training default and `f64` is used where precision matters (gradient
//! checking, log-probability accumulation).

pub mod corpus;
pub mod grammar_eval;
pub mod model;
pub mod priming;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod stats;
pub mod trainer;

pub use scalar::Scalar;

/// Transformer parameters in the default training precision.
pub type Params32 = model::TransformerParams<f32>;
/// Transformer parameters in double precision (gradient checking).
pub type Params64 = model::TransformerParams<f64>;
/// Adam state matching [`Params32`].
pub type AdamState32 = trainer::AdamState<f32>;
/// Adam state matching [`Params64`].
pub type AdamState64 = trainer::AdamState<f64>;

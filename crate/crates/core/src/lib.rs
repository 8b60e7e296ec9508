//! Patch representation learning.

pub mod bpe;
pub mod config;
pub mod fusion;
pub mod graph;
pub mod heads;
pub mod ingest;
pub mod metrics;
pub mod minilang;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod pretraining;
pub mod seq_intention;

pub use patchrep_tensor as tensor;

/// Single-precision model used by the command-line tools.
pub type Model = model::PatchModel<f32>;
pub type ModelF64 = model::PatchModel<f64>;

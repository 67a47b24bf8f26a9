//! Intra-client, inter-image attention for adapting a shared recognition
//! model to heterogeneous clients.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: dense matrices and differentiable primitives with manual backward passes.
//! - [`model`]: the attention module (partitioned projections, feature shuffling, layers).
//! - [`overhead`]: analytic and instrumented parameter/FLOP counts.
//! - [`data`]: synthetic heterogeneous clients, feature files, attention windows.
//! - [`train`]: classifier pretraining, one-time module training, per-client fine-tuning.
//! - [`harness`]: evaluation with client history, sweeps and ablations.

pub mod data;
pub mod error;
pub mod harness;
pub mod model;
pub mod overhead;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{AttentionMode, AttentionWindow, IciiaConfig, IciiaModule, IciiaParams};
pub use tensor::{Matrix, ParamTensor, Scalar};

//! Shapley-value explanations for multimodal early-fusion classifiers.
//!
//! The crate trains a small fused network (per-modality MLP encoders feeding
//! a shared sigmoid head) on synthetic patient cohorts and explains its
//! predictions in two steps: Shapley values over the concatenated hidden
//! features, aggregated per modality, then chain-rule propagation of a
//! modality's attribution back to its raw inputs.

pub mod attribution;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod nn;
pub mod preprocess;
pub mod synth;
pub mod util;

pub use error::{Error, Result};

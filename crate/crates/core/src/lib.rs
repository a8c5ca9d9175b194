//! Speech-to-animation toolkit.
//!
//! Maps phonetic posteriorgrams plus pitch and energy to 32 blendshape
//! coefficient curves with a non-autoregressive Transformer whose decoder
//! feed-forward sublayer is a top-k gated mixture of experts.
//!
//! Modules, bottom-up:
//! - [`numerics`]: tensors, tape-based reverse-mode autodiff, gradient checks, RNG
//! - [`features`]: framing, energy, pitch, VAD, resampling, synthetic PPGs, normalization
//! - [`model`]: encoder/decoder network, MOE routing, dense ablation, BLSTM baseline
//! - [`corpus`]: deterministic synthetic paired corpus
//! - [`trainer`]: masked MSE training with Adam and early stopping
//! - [`evalbench`]: RMSE reports and real-time-factor benchmarks
//! - [`container`]: the `S2A1` binary tensor container shared by all file formats

pub mod animation;
pub mod container;
pub mod corpus;
pub mod error;
pub mod evalbench;
pub mod features;
pub mod model;
pub mod numerics;
pub mod trainer;

pub use error::{Result, S2aError};

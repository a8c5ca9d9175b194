//! Speech-to-animation network: PPG content encoder with positional encoding,
//! prosody concatenation, decoder blocks whose feed-forward sublayers are
//! top-k gated mixtures of convolutional experts, and a linear output head.
//! Also hosts the dense-FFN ablation (through [`Variant`]) and the BLSTM
//! timing baseline.

mod attention;
mod blstm;
mod checkpoint;
mod config;
mod moe;
mod network;
mod params;
mod pe;

pub use attention::{multi_head_self_attention, AttentionOutput, AttentionWeights};
pub use blstm::{Blstm, LstmDirection};
pub use checkpoint::{prepare_input, Checkpoint, TrainingMeta};
pub use config::{ModelConfig, Variant, DENSE_FEATURE_DIM};
pub use moe::{expert_forward, moe_layer, topk_indices, topk_scores, ExpertWeights, MoeOutput, MoeWeights};
pub use network::{ForwardOutput, ModelInput, S2aModel};
pub use params::{Bound, Params};
pub use pe::positional_encoding;

use serde::{Deserialize, Serialize};

use crate::animation::NUM_CHANNELS;
use crate::error::{Result, S2aError};
use crate::features::PPG_DIM;

/// Dimension of the dense spectral-style stand-in features.
pub const DENSE_FEATURE_DIM: usize = 20;

/// Model variants compared in the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// PPG + prosody, MOE decoder.
    Moe,
    /// MOE replaced by one dense expert-shaped FFN of matched per-frame FLOPs.
    Dense,
    /// MOE decoder with pitch and energy zeroed.
    NoProsody,
    /// MOE decoder fed dense speaker-entangled features instead of PPGs.
    DenseFeatures,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Moe, Variant::Dense, Variant::NoProsody, Variant::DenseFeatures];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Moe => "moe",
            Variant::Dense => "dense",
            Variant::NoProsody => "no-prosody",
            Variant::DenseFeatures => "dense-features",
        }
    }

    /// Row label used in RMSE tables.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Moe => "MOE-Transformer",
            Variant::Dense => "without MOE",
            Variant::NoProsody => "without pitch and energy",
            Variant::DenseFeatures => "dense features",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| {
            S2aError::Config(format!(
                "unknown variant {s:?}; valid: {}",
                Self::ALL.map(Variant::name).join(", ")
            ))
        })
    }

    pub fn uses_moe(self) -> bool {
        self != Variant::Dense
    }

    pub fn uses_prosody(self) -> bool {
        self != Variant::NoProsody
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_blocks: usize,
    pub n_dec_blocks: usize,
    pub n_experts: usize,
    pub top_k: usize,
    pub expert_hidden: usize,
    pub expert_kernel: usize,
    /// Hidden width of the encoder's position-wise FFN.
    pub enc_ffn_hidden: usize,
    pub dropout: f64,
    /// Input content dimension (64 for PPGs, 20 for dense features).
    pub ppg_dim: usize,
    pub prosody_dim: usize,
    pub out_dim: usize,
    /// Weight of the optional importance (load-balancing) loss; 0 disables it.
    pub importance_loss: f64,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_heads: 4,
            n_enc_blocks: 2,
            n_dec_blocks: 2,
            n_experts: 48,
            top_k: 16,
            expert_hidden: 128,
            expert_kernel: 3,
            enc_ffn_hidden: 128,
            dropout: 0.1,
            ppg_dim: PPG_DIM,
            prosody_dim: 2,
            out_dim: NUM_CHANNELS,
            importance_loss: 0.0,
            variant: Variant::Moe,
        }
    }
}

impl ModelConfig {
    /// Desk-scale configuration used by tests and quick experiments.
    pub fn tiny() -> Self {
        ModelConfig {
            d_model: 16,
            n_heads: 2,
            n_enc_blocks: 1,
            n_dec_blocks: 1,
            n_experts: 4,
            top_k: 2,
            expert_hidden: 16,
            expert_kernel: 3,
            enc_ffn_hidden: 32,
            dropout: 0.0,
            ..ModelConfig::default()
        }
    }

    /// Smallest configuration for finite-difference checks.
    pub fn gradcheck() -> Self {
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_enc_blocks: 1,
            n_dec_blocks: 1,
            n_experts: 4,
            top_k: 2,
            expert_hidden: 6,
            enc_ffn_hidden: 8,
            dropout: 0.0,
            ..ModelConfig::default()
        }
    }

    /// Same hyperparameters, adjusted for `variant`.
    pub fn for_variant(&self, variant: Variant) -> Self {
        let mut c = self.clone();
        c.variant = variant;
        c.ppg_dim = match variant {
            Variant::DenseFeatures => DENSE_FEATURE_DIM,
            _ if self.variant == Variant::DenseFeatures => PPG_DIM,
            _ => self.ppg_dim,
        };
        c
    }

    /// Hidden width of the dense ablation FFN: `top_k` experts' worth.
    pub fn dense_hidden(&self) -> usize {
        self.top_k * self.expert_hidden
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(S2aError::Config(m));
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return fail(format!("d_model {} must be a positive multiple of n_heads {}", self.d_model, self.n_heads));
        }
        if (self.d_model / self.n_heads) == 0 || self.d_model % 2 != 0 {
            return fail("d_model must be even for sinusoidal encoding".into());
        }
        if self.top_k == 0 || self.top_k > self.n_experts {
            return fail(format!("top_k {} must satisfy 1 <= k <= n = {}", self.top_k, self.n_experts));
        }
        if self.expert_kernel % 2 == 0 {
            return fail(format!("expert_kernel {} must be odd", self.expert_kernel));
        }
        if self.out_dim != NUM_CHANNELS {
            return fail(format!("out_dim must be {NUM_CHANNELS}"));
        }
        if self.expert_hidden == 0 || self.enc_ffn_hidden == 0 || self.ppg_dim == 0 {
            return fail("layer widths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} must be in [0, 1)", self.dropout));
        }
        if self.prosody_dim != 2 {
            return fail("prosody_dim must be 2 (pitch, energy)".into());
        }
        if self.importance_loss < 0.0 {
            return fail("importance_loss must be non-negative".into());
        }
        Ok(())
    }
}

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::ModelConfig;
use super::network::{ModelInput, S2aModel};
use super::params::Params;
use crate::animation::AnimationSequence;
use crate::container::Container;
use crate::error::{Result, S2aError};
use crate::features::{animation_len, resample_linear, FeatureKind, FeatureSequence, NormStats, ANIMATION_FPS};
use crate::numerics::Tensor;

/// Bookkeeping stored alongside the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingMeta {
    pub epoch: usize,
    pub steps: usize,
    pub seed: u64,
    pub train_loss: f64,
    /// Raw-unit validation RMSE, absent for runs without a validation set.
    pub val_rmse: Option<f64>,
}

/// Resamples a feature sequence to `t2` animation frames and normalizes its
/// prosody streams.
pub fn prepare_input(fs: &FeatureSequence, stats: &NormStats, t2: usize) -> Result<ModelInput> {
    fs.validate()?;
    let content = resample_linear(&fs.ppg, t2, fs.kind == FeatureKind::Ppg)?;
    let prosody = resample_linear(&stats.prosody(fs), t2, false)?;
    ModelInput::new(content, prosody)
}

/// Trained model: configuration, weights, normalization and training metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: Params<f32>,
    pub stats: NormStats,
    pub meta: TrainingMeta,
}

impl Checkpoint {
    pub fn new(config: ModelConfig, params: Params<f32>, stats: NormStats, meta: TrainingMeta) -> Result<Self> {
        S2aModel::new(config.clone())?.check_params(&params)?;
        Ok(Checkpoint {
            config,
            params,
            stats,
            meta,
        })
    }

    pub fn model(&self) -> Result<S2aModel> {
        S2aModel::new(self.config.clone())
    }

    pub fn to_container(&self) -> Container {
        let meta = json!({
            "kind": "checkpoint",
            "config": self.config,
            "norm": self.stats,
            "training": self.meta,
        });
        let mut c = Container::new(meta);
        for (name, t) in self.params.iter() {
            c.push(name, t.clone());
        }
        c
    }

    pub fn from_container(c: Container) -> Result<Self> {
        if c.meta.get("kind").and_then(|k| k.as_str()) != Some("checkpoint") {
            return Err(S2aError::InvalidInput("container is not a checkpoint".into()));
        }
        let field = |k: &str| {
            c.meta
                .get(k)
                .cloned()
                .ok_or_else(|| S2aError::InvalidInput(format!("checkpoint metadata lacks '{k}'")))
        };
        let config: ModelConfig = serde_json::from_value(field("config")?)?;
        let stats: NormStats = serde_json::from_value(field("norm")?)?;
        let meta: TrainingMeta = serde_json::from_value(field("training")?)?;
        let mut params = Params::default();
        for (name, t) in c.tensors {
            params.insert(name, t)?;
        }
        Checkpoint::new(config, params, stats, meta)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Checkpoint::from_container(Container::read(path)?)
    }

    /// Normalized-space prediction for an already prepared input.
    pub fn predict_normalized(&self, input: &ModelInput) -> Result<Tensor<f32>> {
        self.model()?.predict(&self.params, input)
    }

    /// Full inference: resample to 60 fps, run the network, denormalize and
    /// clamp to [0, 1].
    pub fn animate(&self, fs: &FeatureSequence) -> Result<AnimationSequence> {
        if fs.dim() != self.config.ppg_dim {
            return Err(S2aError::InvalidInput(format!(
                "feature dimension {} does not match checkpoint input dimension {}",
                fs.dim(),
                self.config.ppg_dim
            )));
        }
        let input = prepare_input(fs, &self.stats, animation_len(fs.len()))?;
        let norm = self.predict_normalized(&input)?;
        let frames = self.stats.denormalize_animation(&norm)?;
        AnimationSequence::new(fs.utterance_id.clone(), frames, ANIMATION_FPS)
    }
}

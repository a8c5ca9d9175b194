use serde::{Deserialize, Serialize};

use super::rmse::{format_table, RmseReport};
use crate::animation::AnimationSequence;
use crate::corpus::{Corpus, Example, Split};
use crate::error::{Result, S2aError};
use crate::model::{Checkpoint, Variant};
use crate::numerics::Tensor;

pub const REPORT_SCHEMA_VERSION: u32 = 1;
/// Name of the constant-prediction pseudo-variant.
pub const MEAN_PREDICTOR: &str = "mean-predictor";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub schema_version: u32,
    pub rows: Vec<RmseReport>,
    /// Requested variants that had no checkpoint.
    pub skipped: Vec<String>,
}

impl SuiteReport {
    pub fn table(&self) -> String {
        format_table(&self.rows)
    }

    pub fn row(&self, name: &str) -> Option<&RmseReport> {
        self.rows.iter().find(|r| r.name == name)
    }
}

/// RMSE of one checkpoint over `examples`.
pub fn evaluate_checkpoint(name: &str, ckpt: &Checkpoint, examples: &[Example]) -> Result<RmseReport> {
    let preds: Vec<AnimationSequence> = examples
        .iter()
        .map(|ex| ckpt.animate(&ex.features))
        .collect::<Result<_>>()?;
    let pairs: Vec<_> = preds.iter().zip(examples.iter().map(|e| &e.animation)).collect();
    RmseReport::from_pairs(name, &pairs)
}

/// Predicts the constant row `mean` for every frame.
pub fn mean_predictor_report(name: &str, mean: &[f32], examples: &[Example]) -> Result<RmseReport> {
    let preds: Vec<AnimationSequence> = examples
        .iter()
        .map(|ex| {
            let t = ex.animation.len();
            let c = mean.len();
            AnimationSequence::new(ex.animation.utterance_id.clone(), Tensor::from_fn(&[t, c], |i| mean[i % c]), ex.animation.fps)
        })
        .collect::<Result<_>>()?;
    let pairs: Vec<_> = preds.iter().zip(examples.iter().map(|e| &e.animation)).collect();
    RmseReport::from_pairs(name, &pairs)
}

/// Evaluates each named checkpoint on the corpus test split (PPG or dense
/// inputs according to its variant). Entries without a checkpoint are
/// skipped with a warning. A mean-predictor row built from the first
/// checkpoint's training mean is appended when `include_mean` is set.
pub fn evaluate_suite(checkpoints: &[(&str, Option<&Checkpoint>)], corpus: &Corpus, include_mean: bool) -> Result<SuiteReport> {
    let mut ppg: Option<Vec<Example>> = None;
    let mut dense: Option<Vec<Example>> = None;
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    let mut mean: Option<Vec<f32>> = None;
    for &(name, ckpt) in checkpoints {
        let Some(ckpt) = ckpt else {
            log::warn!("no checkpoint for variant '{name}', skipping");
            skipped.push(name.to_string());
            continue;
        };
        let is_dense = ckpt.config.variant == Variant::DenseFeatures;
        let slot = if is_dense { &mut dense } else { &mut ppg };
        if slot.is_none() {
            *slot = Some(corpus.load_split(Split::Test, is_dense)?);
        }
        let examples = slot.as_ref().expect("loaded above");
        rows.push(evaluate_checkpoint(name, ckpt, examples)?);
        mean.get_or_insert_with(|| ckpt.stats.anim_mean.clone());
    }
    if include_mean {
        let mean = mean.ok_or_else(|| S2aError::InvalidInput("mean predictor needs at least one checkpoint".into()))?;
        if ppg.is_none() {
            ppg = Some(corpus.load_split(Split::Test, false)?);
        }
        rows.push(mean_predictor_report(MEAN_PREDICTOR, &mean, ppg.as_ref().expect("loaded above"))?);
    }
    Ok(SuiteReport {
        schema_version: REPORT_SCHEMA_VERSION,
        rows,
        skipped,
    })
}

//! Mini-batch training: masked MSE in normalized target space, Adam with
//! global-norm clipping, length-bucketed padded batches, early stopping on
//! validation RMSE and best-checkpoint selection.

mod loss;
mod optim;

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use loss::{masked_sse, mse_loss};
pub use optim::{clip_grad_norm, global_norm, Adam};

use crate::corpus::{Corpus, Example, Split};
use crate::error::{Result, S2aError};
use crate::features::{FeatureKind, NormStats};
use crate::model::{prepare_input, Checkpoint, ModelConfig, ModelInput, Params, S2aModel, TrainingMeta, Variant};
use crate::numerics::{Graph, RngState, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Utterances per batch.
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub early_stop_patience: usize,
    pub seed: u64,
    pub grad_clip_norm: f64,
    /// Optional wall-clock cap; a run stopped by it is not reproducible.
    pub max_seconds: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            batch_size: 8,
            max_epochs: 100,
            early_stop_patience: 10,
            seed: 0,
            grad_clip_norm: 1.0,
            max_seconds: None,
        }
    }
}

/// Step size used by the single-utterance overfitting harness.
pub const OVERFIT_LEARNING_RATE: f64 = 5e-3;
/// Step budget and normalized-RMSE target of the overfitting harness.
pub const OVERFIT_MAX_STEPS: usize = 500;
pub const OVERFIT_THRESHOLD: f64 = 0.02;

impl TrainConfig {
    /// Settings for [`overfit_single`].
    pub fn overfit() -> Self {
        TrainConfig {
            learning_rate: OVERFIT_LEARNING_RATE,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(S2aError::Config(m.to_string()));
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return fail("learning_rate must be a non-negative number");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("adam betas must be in [0, 1)");
        }
        if !(self.eps > 0.0) || !(self.grad_clip_norm > 0.0) {
            return fail("eps and grad_clip_norm must be positive");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.early_stop_patience == 0 {
            return fail("batch_size, max_epochs and early_stop_patience must be positive");
        }
        if self.early_stop_patience > self.max_epochs {
            return fail("early_stop_patience must not exceed max_epochs");
        }
        Ok(())
    }
}

/// One utterance ready for the network.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub id: String,
    pub input: ModelInput,
    /// Normalized `T×32` target.
    pub target: Tensor<f32>,
    /// Raw `T×32` target in [0, 1].
    pub raw: Tensor<f32>,
}

fn check_kind(variant: Variant, ex: &Example) -> Result<()> {
    let want = if variant == Variant::DenseFeatures {
        FeatureKind::Dense
    } else {
        FeatureKind::Ppg
    };
    if ex.features.kind != want {
        return Err(S2aError::InvalidInput(format!(
            "{}: variant {variant} expects {want:?} features",
            ex.features.utterance_id
        )));
    }
    Ok(())
}

pub fn prepare_examples(examples: &[Example], stats: &NormStats) -> Result<Vec<Prepared>> {
    examples
        .iter()
        .map(|ex| {
            let t2 = ex.animation.len();
            Ok(Prepared {
                id: ex.features.utterance_id.clone(),
                input: prepare_input(&ex.features, stats, t2)?,
                target: stats.apply_norm(&ex.animation.frames)?,
                raw: ex.animation.frames.clone(),
            })
        })
        .collect()
}

/// Groups indices of similar length: sort by length, cut into batches of
/// `batch_size`, then shuffle the batch order.
pub fn make_batches(lengths: &[usize], batch_size: usize, rng: &mut RngState) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by_key(|&i| (lengths[i], i));
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    rng.shuffle(&mut batches);
    batches
}

/// Loss and per-parameter gradients for one padded batch.
pub fn batch_gradients(
    model: &S2aModel,
    params: &Params<f32>,
    batch: &[&Prepared],
    dropout_rng: Option<&mut RngState>,
) -> Result<(f64, Vec<Vec<f32>>)> {
    let max_len = batch.iter().map(|p| p.input.len()).max().unwrap_or(0);
    let inputs: Vec<ModelInput> = batch.iter().map(|p| p.input.padded(max_len)).collect();
    let targets: Vec<Tensor<f32>> = batch.iter().map(|p| p.target.pad_rows(max_len)).collect();
    batch_gradients_padded(model, params, &inputs, &targets, dropout_rng)
}

/// Like [`batch_gradients`] with inputs and targets already padded to a common
/// length; `valid_len` of each input marks its real frames.
pub fn batch_gradients_padded(
    model: &S2aModel,
    params: &Params<f32>,
    inputs: &[ModelInput],
    targets: &[Tensor<f32>],
    mut dropout_rng: Option<&mut RngState>,
) -> Result<(f64, Vec<Vec<f32>>)> {
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(S2aError::InvalidInput("empty or mismatched batch".into()));
    }
    let mut g = Graph::new();
    let bound = params.bind(&mut g, true)?;
    let mut sse = Vec::with_capacity(inputs.len());
    let mut cells = 0;
    let mut aux = Vec::new();
    for (input, target) in inputs.iter().zip(targets) {
        let out = model.forward_input(&mut g, &bound, input, dropout_rng.as_deref_mut())?;
        let tgt = g.constant_ref(target);
        let valid: Vec<bool> = (0..input.len()).map(|t| t < input.valid_len).collect();
        let (s, n) = masked_sse(&mut g, out.out, tgt, &valid)?;
        sse.push(s);
        cells += n;
        aux.extend(out.aux_loss);
    }
    let mut total = sse[0];
    for &s in &sse[1..] {
        total = g.add(total, s)?;
    }
    let mut loss = g.scale(total, 1.0 / cells as f32)?;
    if !aux.is_empty() {
        let mut a = aux[0];
        for &x in &aux[1..] {
            a = g.add(a, x)?;
        }
        let a = g.scale(a, 1.0 / inputs.len() as f32)?;
        loss = g.add(loss, a)?;
    }
    let value = g.scalar(loss) as f64;
    let mut grads = g.backward(loss)?;
    let out = bound
        .vars()
        .iter()
        .zip(params.iter())
        .map(|(v, (_, t))| grads.take(*v).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();
    Ok((value, out))
}

/// Pooled raw-unit RMSE of `params` over `data` (all channels).
pub fn evaluate_rmse(model: &S2aModel, params: &Params<f32>, stats: &NormStats, data: &[Prepared]) -> Result<f64> {
    let mut sse = 0.0f64;
    let mut n = 0usize;
    for p in data {
        let pred = stats.denormalize_animation(&model.predict(params, &p.input)?)?;
        for (a, b) in pred.data().iter().zip(p.raw.data()) {
            sse += ((a - b) as f64).powi(2);
        }
        n += p.raw.numel();
    }
    if n == 0 {
        return Err(S2aError::EmptySequence("no evaluation frames".into()));
    }
    Ok((sse / n as f64).sqrt())
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
    pub val_rmse: f64,
    pub best: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Trains on the corpus train split, early-stopping on the val split.
pub fn train(corpus: &Corpus, model_cfg: &ModelConfig, cfg: &TrainConfig, log: Option<&mut dyn Write>) -> Result<TrainOutcome> {
    let dense = model_cfg.variant == Variant::DenseFeatures;
    let train_set = corpus.load_split(Split::Train, dense)?;
    let val_set = corpus.load_split(Split::Val, dense)?;
    train_examples(&train_set, &val_set, model_cfg, cfg, log)
}

pub fn train_examples(
    train_set: &[Example],
    val_set: &[Example],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = S2aModel::new(model_cfg.clone())?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(S2aError::InvalidInput("train and val splits must be non-empty".into()));
    }
    for ex in train_set.iter().chain(val_set) {
        check_kind(model_cfg.variant, ex)?;
    }
    let anims: Vec<&Tensor<f32>> = train_set.iter().map(|e| &e.animation.frames).collect();
    let feats: Vec<_> = train_set.iter().map(|e| &e.features).collect();
    let stats = NormStats::fit(&anims, &feats)?;
    let train_data = prepare_examples(train_set, &stats)?;
    let val_data = prepare_examples(val_set, &stats)?;

    let master = RngState::new(cfg.seed);
    let mut params: Params<f32> = model.init_params(&mut master.split(0));
    let mut shuffle_rng = master.split(1);
    let mut dropout_rng = master.split(2);
    let sizes: Vec<usize> = params.iter().map(|(_, t)| t.numel()).collect();
    let mut adam = Adam::new(&sizes, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps);
    let lengths: Vec<usize> = train_data.iter().map(|p| p.input.len()).collect();

    let started = Instant::now();
    let mut best: Option<(f64, Params<f32>, TrainingMeta)> = None;
    let mut since_best = 0;
    let mut history = Vec::new();
    let mut stopped_early = false;
    let mut steps = 0usize;
    for epoch in 1..=cfg.max_epochs {
        let batches = make_batches(&lengths, cfg.batch_size, &mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in &batches {
            let items: Vec<&Prepared> = batch.iter().map(|&i| &train_data[i]).collect();
            let (loss, mut grads) = match batch_gradients(&model, &params, &items, Some(&mut dropout_rng)) {
                // inputs were validated up front, so a failure after updates is numeric blow-up
                Err(e) if steps > 0 => {
                    return Err(S2aError::Divergence(format!("epoch {epoch}, step {}: {e}", steps + 1)));
                }
                r => r?,
            };
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(S2aError::Divergence(format!(
                    "non-finite loss or gradient at epoch {epoch}, step {}",
                    steps + 1
                )));
            }
            clip_grad_norm(&mut grads, cfg.grad_clip_norm);
            adam.step(params.tensors_mut().map(|t| t.data_mut()), &grads)?;
            if params.iter().any(|(_, t)| !t.is_finite()) {
                return Err(S2aError::Divergence(format!("non-finite parameters after step {}", steps + 1)));
            }
            loss_sum += loss;
            steps += 1;
        }
        let train_loss = loss_sum / batches.len() as f64;
        let val_rmse = evaluate_rmse(&model, &params, &stats, &val_data)?;
        if !val_rmse.is_finite() {
            return Err(S2aError::Divergence(format!("validation RMSE is {val_rmse} at epoch {epoch}")));
        }
        let improved = best.as_ref().is_none_or(|(b, _, _)| val_rmse < *b);
        if improved {
            let meta = TrainingMeta {
                epoch,
                steps,
                seed: cfg.seed,
                train_loss,
                val_rmse: Some(val_rmse),
            };
            best = Some((val_rmse, params.clone(), meta));
            since_best = 0;
        } else {
            since_best += 1;
        }
        let record = EpochRecord {
            epoch,
            steps,
            train_loss,
            val_rmse,
            best: improved,
        };
        log::info!("epoch {epoch}: train loss {train_loss:.5}, val RMSE {val_rmse:.5}");
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{}", serde_json::to_string(&record)?)?;
        }
        history.push(record);
        if since_best >= cfg.early_stop_patience {
            stopped_early = true;
            break;
        }
        if cfg.max_seconds.is_some_and(|s| started.elapsed().as_secs_f64() >= s) {
            log::warn!("time budget reached after epoch {epoch}");
            break;
        }
    }
    let (_, best_params, meta) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(model_cfg.clone(), best_params, stats, meta)?,
        history,
        stopped_early,
    })
}

#[derive(Debug, Clone)]
pub struct OverfitReport {
    pub checkpoint: Checkpoint,
    /// Normalized-space training loss before each step.
    pub losses: Vec<f64>,
    /// Normalized-space RMSE of the final parameters.
    pub final_rmse: f64,
    pub steps: usize,
    pub converged: bool,
}

/// Repeatedly fits one utterance until its normalized RMSE falls below
/// `threshold` or `max_steps` updates have run. Not converging is reported
/// as an error: it points at broken gradients or model wiring.
pub fn overfit_single(
    example: &Example,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    max_steps: usize,
    threshold: f64,
) -> Result<OverfitReport> {
    let report = overfit_run(example, model_cfg, cfg, max_steps, threshold)?;
    if !report.converged {
        return Err(S2aError::Divergence(format!(
            "overfit run reached RMSE {:.4} after {} steps (threshold {threshold})",
            report.final_rmse, report.steps
        )));
    }
    Ok(report)
}

/// [`overfit_single`] without the convergence check.
pub fn overfit_run(
    example: &Example,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    max_steps: usize,
    threshold: f64,
) -> Result<OverfitReport> {
    cfg.validate()?;
    check_kind(model_cfg.variant, example)?;
    let model = S2aModel::new(model_cfg.clone())?;
    let stats = NormStats::fit(&[&example.animation.frames], &[&example.features])?;
    let data = prepare_examples(std::slice::from_ref(example), &stats)?;
    let master = RngState::new(cfg.seed);
    let mut params: Params<f32> = model.init_params(&mut master.split(0));
    let mut dropout_rng = master.split(2);
    let sizes: Vec<usize> = params.iter().map(|(_, t)| t.numel()).collect();
    let mut adam = Adam::new(&sizes, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps);
    let mut losses = Vec::new();
    let rmse_of = |params: &Params<f32>| -> Result<f64> {
        let pred = model.predict(params, &data[0].input)?;
        let mse = pred
            .data()
            .iter()
            .zip(data[0].target.data())
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            / pred.numel() as f64;
        Ok(mse.sqrt())
    };
    let mut final_rmse = rmse_of(&params)?;
    let mut steps = 0;
    while steps < max_steps && final_rmse >= threshold {
        let (loss, mut grads) = batch_gradients(&model, &params, &[&data[0]], Some(&mut dropout_rng))?;
        if !loss.is_finite() {
            return Err(S2aError::Divergence(format!("non-finite loss at step {}", steps + 1)));
        }
        losses.push(loss);
        clip_grad_norm(&mut grads, cfg.grad_clip_norm);
        adam.step(params.tensors_mut().map(|t| t.data_mut()), &grads)?;
        steps += 1;
        final_rmse = rmse_of(&params)?;
    }
    let meta = TrainingMeta {
        epoch: steps,
        steps,
        seed: cfg.seed,
        train_loss: final_rmse * final_rmse,
        val_rmse: None,
    };
    Ok(OverfitReport {
        checkpoint: Checkpoint::new(model_cfg.clone(), params, stats, meta)?,
        losses,
        final_rmse,
        steps,
        converged: final_rmse < threshold,
    })
}

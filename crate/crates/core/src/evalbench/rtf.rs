use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::suite::REPORT_SCHEMA_VERSION;
use crate::error::{Result, S2aError};
use crate::features::{NormStats, ANIMATION_FPS};
use crate::model::{Blstm, ModelInput, Params, S2aModel};
use crate::numerics::{RngState, Tensor};

pub const MIN_RUNS: usize = 5;
pub const MIN_WARMUP: usize = 2;
/// Coefficient of variation above which a timing is flagged as unstable.
pub const CV_LIMIT: f64 = 0.3;

/// A network under benchmark: either the Transformer model or the BLSTM
/// baseline, each followed by denormalization and clamping.
pub enum BenchModel<'a> {
    Transformer {
        name: String,
        model: S2aModel,
        params: &'a Params<f32>,
        stats: &'a NormStats,
    },
    Blstm {
        name: String,
        blstm: &'a Blstm,
        stats: &'a NormStats,
    },
}

impl BenchModel<'_> {
    pub fn name(&self) -> &str {
        match self {
            BenchModel::Transformer { name, .. } | BenchModel::Blstm { name, .. } => name,
        }
    }

    fn input_dim(&self) -> usize {
        match self {
            BenchModel::Transformer { model, .. } => model.cfg.ppg_dim,
            BenchModel::Blstm { blstm, .. } => blstm.input_dim - 2,
        }
    }

    /// One timed generation; returns the output so it is not optimized away.
    fn generate(&self, input: &ModelInput) -> Result<Tensor<f32>> {
        match self {
            BenchModel::Transformer { model, params, stats, .. } => {
                stats.denormalize_animation(&model.predict(params, input)?)
            }
            BenchModel::Blstm { blstm, stats, .. } => {
                let t = input.len();
                let (cd, pd) = (input.content.cols(), input.prosody.cols());
                let x = Tensor::from_fn(&[t, cd + pd], |i| {
                    let (r, c) = (i / (cd + pd), i % (cd + pd));
                    if c < cd {
                        input.content.at(r, c)
                    } else {
                        input.prosody.at(r, c - cd)
                    }
                });
                stats.denormalize_animation(&blstm.forward(&x)?)
            }
        }
    }

    fn is_baseline(&self) -> bool {
        matches!(self, BenchModel::Blstm { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub frames: usize,
    pub runs: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            frames: 720,
            runs: 10,
            warmup: 2,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(S2aError::Bench("frames must be >= 1".into()));
        }
        if self.runs < MIN_RUNS {
            return Err(S2aError::Bench(format!("runs must be >= {MIN_RUNS}, got {}", self.runs)));
        }
        if self.warmup < MIN_WARMUP {
            return Err(S2aError::Bench(format!("warmup must be >= {MIN_WARMUP}, got {}", self.warmup)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTiming {
    pub name: String,
    pub mean_s: f64,
    pub std_s: f64,
    pub cv: f64,
    /// Compute seconds per second of generated animation.
    pub rtf_mean: f64,
    pub rtf_std: f64,
    /// Baseline RTF divided by this model's RTF.
    pub speedup_vs_baseline: Option<f64>,
    pub unstable: bool,
    pub times_s: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtfReport {
    pub schema_version: u32,
    pub frames: usize,
    pub fps: f64,
    pub runs: usize,
    pub warmup: usize,
    pub threads: usize,
    pub timer_resolution_s: f64,
    pub baseline: Option<String>,
    pub models: Vec<ModelTiming>,
}

impl RtfReport {
    pub fn model(&self, name: &str) -> Option<&ModelTiming> {
        self.models.iter().find(|m| m.name == name)
    }

    pub fn table(&self) -> String {
        use std::fmt::Write as _;
        let width = self.models.iter().map(|m| m.name.len()).max().unwrap_or(0).max(5);
        let mut s = format!(
            "RTF at {} frames ({:.1} s of animation), {} runs after {} warmup, {} thread\n",
            self.frames,
            self.frames as f64 / self.fps,
            self.runs,
            self.warmup,
            self.threads
        );
        writeln!(s, "{:<width$}  {:>12}  {:>10}  {:>7}  {:>8}", "model", "rtf", "std", "cv", "speedup").unwrap();
        for m in &self.models {
            let speedup = m.speedup_vs_baseline.map_or("-".to_string(), |v| format!("{v:.2}x"));
            let flag = if m.unstable { "  unstable" } else { "" };
            writeln!(
                s,
                "{:<width$}  {:>12.6}  {:>10.6}  {:>7.3}  {:>8}{flag}",
                m.name, m.rtf_mean, m.rtf_std, m.cv, speedup
            )
            .unwrap();
        }
        s
    }
}

/// Smallest observable step of the monotonic clock.
pub fn timer_resolution() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..20 {
        let start = Instant::now();
        let mut now = Instant::now();
        while now == start {
            now = Instant::now();
        }
        best = best.min(now - start);
    }
    best
}

fn random_input(dim: usize, frames: usize, seed: u64) -> Result<ModelInput> {
    let mut rng = RngState::new(seed);
    let mut content = Tensor::from_fn(&[frames, dim], |_| rng.uniform() as f32);
    // rows of a posteriorgram sum to one
    for r in 0..frames {
        let row = content.row_mut(r);
        let s: f32 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    let prosody = Tensor::from_fn(&[frames, 2], |_| rng.normal() as f32);
    ModelInput::new(content, prosody)
}

/// Wall time of single-threaded forward passes on random inputs of
/// `cfg.frames` frames. Warmup runs are discarded.
pub fn bench_rtf(models: &[BenchModel<'_>], cfg: &BenchConfig) -> Result<RtfReport> {
    cfg.validate()?;
    if models.is_empty() {
        return Err(S2aError::Bench("no models to benchmark".into()));
    }
    let resolution = timer_resolution().as_secs_f64();
    let seconds = cfg.frames as f64 / ANIMATION_FPS;
    let mut timings = Vec::with_capacity(models.len());
    for m in models {
        let input = random_input(m.input_dim(), cfg.frames, cfg.seed)?;
        for _ in 0..cfg.warmup {
            std::hint::black_box(m.generate(&input)?);
        }
        let mut times = Vec::with_capacity(cfg.runs);
        for _ in 0..cfg.runs {
            let start = Instant::now();
            std::hint::black_box(m.generate(&input)?);
            times.push(start.elapsed().as_secs_f64());
        }
        let n = times.len() as f64;
        let mean = times.iter().sum::<f64>() / n;
        let std = (times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n).sqrt();
        if mean <= 0.0 || resolution > 0.01 * mean {
            return Err(S2aError::Bench(format!(
                "{}: timer resolution {resolution:.3e} s is coarser than 1% of the measured {mean:.3e} s",
                m.name()
            )));
        }
        let cv = std / mean;
        if cv >= CV_LIMIT {
            log::warn!("{}: unstable timing (cv {cv:.2})", m.name());
        }
        timings.push(ModelTiming {
            name: m.name().to_string(),
            mean_s: mean,
            std_s: std,
            cv,
            rtf_mean: mean / seconds,
            rtf_std: std / seconds,
            speedup_vs_baseline: None,
            unstable: cv >= CV_LIMIT,
            times_s: times,
        });
    }
    let baseline = models.iter().position(BenchModel::is_baseline);
    if let Some(b) = baseline {
        let base_rtf = timings[b].rtf_mean;
        for t in &mut timings {
            t.speedup_vs_baseline = Some(base_rtf / t.rtf_mean);
        }
    }
    Ok(RtfReport {
        schema_version: REPORT_SCHEMA_VERSION,
        frames: cfg.frames,
        fps: ANIMATION_FPS,
        runs: cfg.runs,
        warmup: cfg.warmup,
        threads: 1,
        timer_resolution_s: resolution,
        baseline: baseline.map(|b| timings[b].name.clone()),
        models: timings,
    })
}

/// BLSTM sized to within ±20% of the Transformer's parameter count.
pub fn matched_blstm(model: &S2aModel, params: &Params<f32>, seed: u64) -> Result<Blstm> {
    let input_dim = model.cfg.ppg_dim + model.cfg.prosody_dim;
    let hidden = Blstm::hidden_for_budget(input_dim, model.cfg.out_dim, params.num_elements());
    Blstm::new(input_dim, hidden, model.cfg.out_dim, &mut RngState::new(seed))
}

/// Ratio of BLSTM forward time at `2·frames` to time at `frames`: the
/// median over `runs` interleaved pairs of timings, after `warmup` pairs.
/// Interleaving keeps slow drift in machine load out of the ratio.
pub fn blstm_scaling(blstm: &Blstm, frames: usize, runs: usize, warmup: usize) -> Result<f64> {
    let input = |t: usize| Tensor::from_fn(&[t, blstm.input_dim], |i| ((i * 7919) % 1000) as f32 / 1000.0);
    let (short, long) = (input(frames), input(2 * frames));
    let time = |x: &Tensor<f32>| -> Result<f64> {
        let s = Instant::now();
        std::hint::black_box(blstm.forward(x)?);
        Ok(s.elapsed().as_secs_f64())
    };
    for _ in 0..warmup {
        time(&short)?;
        time(&long)?;
    }
    let mut ratios: Vec<f64> = (0..runs.max(1))
        .map(|_| Ok(time(&long)? / time(&short)?))
        .collect::<Result<_>>()?;
    ratios.sort_by(f64::total_cmp);
    Ok(ratios[ratios.len() / 2])
}

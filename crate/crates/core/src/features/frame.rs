use serde::{Deserialize, Serialize};

use crate::error::{Result, S2aError};

/// `ln(1e-10)`: energy of an all-zero frame.
pub const ENERGY_FLOOR: f64 = -23.025_850_929_940_457;
pub const PITCH_MIN_HZ: f64 = 60.0;
pub const PITCH_MAX_HZ: f64 = 400.0;
/// Minimum normalized autocorrelation peak for a voiced frame.
pub const VOICING_THRESHOLD: f64 = 0.3;
// Among peaks, the shortest lag within this fraction of the best one wins.
const OCTAVE_TOLERANCE: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WindowShape {
    Hamming,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSpec {
    pub sample_rate: u32,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub window_shape: WindowShape,
}

impl Default for FrameSpec {
    fn default() -> Self {
        FrameSpec {
            sample_rate: 16_000,
            window_ms: 40.0,
            hop_ms: 20.0,
            window_shape: WindowShape::Hamming,
        }
    }
}

impl FrameSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 || self.window_ms <= 0.0 || self.hop_ms <= 0.0 {
            return Err(S2aError::Config("frame spec values must be positive".into()));
        }
        if self.hop_ms > self.window_ms {
            return Err(S2aError::Config("hop must not exceed window".into()));
        }
        Ok(())
    }

    pub fn window_len(&self) -> usize {
        (self.sample_rate as f64 * self.window_ms / 1000.0).round() as usize
    }

    pub fn hop_len(&self) -> usize {
        (self.sample_rate as f64 * self.hop_ms / 1000.0).round() as usize
    }

    /// `floor((N - W) / H) + 1`, or 0 when the waveform is shorter than a window.
    pub fn frame_count(&self, n_samples: usize) -> usize {
        let w = self.window_len();
        if n_samples < w {
            0
        } else {
            (n_samples - w) / self.hop_len() + 1
        }
    }

    fn frames<'s>(&self, samples: &'s [f32]) -> impl Iterator<Item = &'s [f32]> + 's {
        let (w, h) = (self.window_len(), self.hop_len());
        let n = self.frame_count(samples.len());
        (0..n).map(move |i| &samples[i * h..i * h + w])
    }
}

/// Symmetric Hamming window.
pub fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (len - 1) as f64).cos())
        .collect()
}

/// Per-frame log power `ln(Σ (w·x)² + 1e-10)` of the Hamming-windowed frame.
pub fn frame_energy(samples: &[f32], spec: &FrameSpec) -> Vec<f32> {
    let window = hamming(spec.window_len());
    let out: Vec<f32> = spec
        .frames(samples)
        .map(|frame| {
            let power: f64 = frame
                .iter()
                .zip(&window)
                .map(|(&x, &w)| {
                    let v = w * x as f64;
                    v * v
                })
                .sum();
            (power + 1e-10).ln() as f32
        })
        .collect();
    if out.is_empty() {
        log::warn!(
            "waveform of {} samples is shorter than one {}-sample window",
            samples.len(),
            spec.window_len()
        );
    }
    out
}

/// Per-frame F0 in Hz by normalized autocorrelation; 0 marks unvoiced frames.
pub fn frame_pitch(samples: &[f32], spec: &FrameSpec) -> Vec<f32> {
    let sr = spec.sample_rate as f64;
    let out: Vec<f32> = spec
        .frames(samples)
        .map(|frame| frame_f0(frame, sr).unwrap_or(0.0) as f32)
        .collect();
    if out.is_empty() {
        log::warn!("waveform too short for pitch analysis");
    }
    out
}

fn frame_f0(frame: &[f32], sr: f64) -> Option<f64> {
    let n = frame.len();
    let mean = frame.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
    let x: Vec<f64> = frame.iter().map(|&v| v as f64 - mean).collect();
    if x.iter().map(|v| v * v).sum::<f64>() < 1e-10 {
        return None;
    }
    let min_lag = (sr / PITCH_MAX_HZ).floor() as usize;
    let max_lag = ((sr / PITCH_MIN_HZ).ceil() as usize).min(n.saturating_sub(3));
    if min_lag < 2 || max_lag <= min_lag {
        return None;
    }
    // prefix energies for the sliding normalization terms
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + x[i] * x[i];
    }
    let nacf = |lag: usize| -> f64 {
        let m = n - lag;
        let dot: f64 = x[..m].iter().zip(&x[lag..]).map(|(a, b)| a * b).sum();
        let e0 = prefix[m];
        let e1 = prefix[n] - prefix[lag];
        let denom = (e0 * e1).sqrt();
        if denom <= 0.0 {
            0.0
        } else {
            dot / denom
        }
    };
    let lo = min_lag - 1;
    let r: Vec<f64> = (lo..=max_lag + 1).map(nacf).collect();
    let at = |lag: usize| r[lag - lo];
    let best = (min_lag..=max_lag).map(at).fold(f64::NEG_INFINITY, f64::max);
    if best < VOICING_THRESHOLD {
        return None;
    }
    let lag = (min_lag..=max_lag).find(|&l| {
        let v = at(l);
        v >= OCTAVE_TOLERANCE * best && v >= at(l - 1) && v >= at(l + 1)
    })?;
    let (a, b, c) = (at(lag - 1), at(lag), at(lag + 1));
    let curv = a - 2.0 * b + c;
    let shift = if curv.abs() > 1e-12 {
        (0.5 * (a - c) / curv).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    let f0 = sr / (lag as f64 + shift);
    (PITCH_MIN_HZ..=PITCH_MAX_HZ).contains(&f0).then_some(f0)
}

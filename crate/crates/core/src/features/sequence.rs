use serde::{Deserialize, Serialize};

use super::frame::{PITCH_MAX_HZ, PITCH_MIN_HZ};
use crate::error::{Result, S2aError};
use crate::numerics::Tensor;

/// 30 dB below the utterance peak, in natural-log power units.
pub const VAD_DROP: f64 = 6.9;
/// Frames at or below this log power count as silence regardless of the peak.
pub const VAD_SILENCE_LEVEL: f64 = -18.420_680_743_952_367; // ln(1e-8)

/// What the per-frame content matrix holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    /// Phonetic posteriors; each row is a probability distribution.
    Ppg,
    /// Dense spectral-style features with no row constraint.
    Dense,
}

/// Time-aligned content, pitch and energy streams for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub utterance_id: String,
    pub kind: FeatureKind,
    /// `T×D` content matrix (PPG posteriors for [`FeatureKind::Ppg`]).
    pub ppg: Tensor<f32>,
    /// Hz, 0 for unvoiced frames.
    pub pitch: Vec<f32>,
    /// Natural-log frame power.
    pub energy: Vec<f32>,
    pub frame_rate_hz: f64,
}

impl FeatureSequence {
    pub fn new(
        utterance_id: impl Into<String>,
        kind: FeatureKind,
        ppg: Tensor<f32>,
        pitch: Vec<f32>,
        energy: Vec<f32>,
        frame_rate_hz: f64,
    ) -> Result<Self> {
        let fs = FeatureSequence {
            utterance_id: utterance_id.into(),
            kind,
            ppg,
            pitch,
            energy,
            frame_rate_hz,
        };
        fs.validate()?;
        Ok(fs)
    }

    pub fn len(&self) -> usize {
        self.pitch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pitch.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.ppg.cols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.ppg.rank() != 2 {
            return Err(S2aError::InvalidInput(format!(
                "content matrix must be 2-D, got {:?}",
                self.ppg.shape()
            )));
        }
        let t = self.ppg.rows();
        if self.pitch.len() != t || self.energy.len() != t {
            return Err(S2aError::InvalidInput(format!(
                "{}: stream lengths differ (content {t}, pitch {}, energy {})",
                self.utterance_id,
                self.pitch.len(),
                self.energy.len()
            )));
        }
        if !(self.frame_rate_hz > 0.0) {
            return Err(S2aError::InvalidInput("frame rate must be positive".into()));
        }
        if !self.ppg.is_finite() || self.energy.iter().any(|v| !v.is_finite()) {
            return Err(S2aError::InvalidInput(format!("{}: non-finite features", self.utterance_id)));
        }
        if let Some(&p) = self
            .pitch
            .iter()
            .find(|&&p| p != 0.0 && !(PITCH_MIN_HZ as f32..=PITCH_MAX_HZ as f32).contains(&p))
        {
            return Err(S2aError::InvalidInput(format!("{}: pitch {p} Hz out of range", self.utterance_id)));
        }
        if self.kind == FeatureKind::Ppg {
            for r in 0..t {
                let row = self.ppg.row(r);
                let sum: f64 = row.iter().map(|&v| v as f64).sum();
                if row.iter().any(|&v| v < 0.0) || (sum - 1.0).abs() > 1e-4 {
                    return Err(S2aError::InvalidInput(format!(
                        "{}: PPG row {r} is not a distribution (sum {sum})",
                        self.utterance_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Frames `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> FeatureSequence {
        FeatureSequence {
            utterance_id: self.utterance_id.clone(),
            kind: self.kind,
            ppg: self.ppg.slice_rows(start, end),
            pitch: self.pitch[start..end].to_vec(),
            energy: self.energy[start..end].to_vec(),
            frame_rate_hz: self.frame_rate_hz,
        }
    }
}

/// Range `[start, end)` of frames kept by [`vad_trim`].
pub fn vad_range(energy: &[f32]) -> Option<(usize, usize)> {
    let max = energy.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let threshold = (max - VAD_DROP).max(VAD_SILENCE_LEVEL);
    let active = |e: &f32| (*e as f64) >= threshold && (*e as f64) > VAD_SILENCE_LEVEL;
    let start = energy.iter().position(active)?;
    let end = energy.iter().rposition(active)? + 1;
    Some((start, end))
}

/// Drops leading and trailing low-energy frames; interior frames are kept.
pub fn vad_trim(fs: &FeatureSequence) -> Result<FeatureSequence> {
    if fs.is_empty() {
        return Err(S2aError::EmptySequence(format!("{}: nothing to trim", fs.utterance_id)));
    }
    let (start, end) = vad_range(&fs.energy)
        .ok_or_else(|| S2aError::EmptySequence(format!("{}: no frame above the VAD threshold", fs.utterance_id)))?;
    Ok(fs.slice(start, end))
}

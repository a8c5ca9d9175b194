use serde::{Deserialize, Serialize};

use super::sequence::FeatureSequence;
use crate::error::{Result, S2aError};
use crate::numerics::Tensor;

/// Minimum standard deviation; zero-variance dimensions are floored here.
pub const STD_FLOOR: f64 = 1e-6;

/// Per-dimension z-score statistics (population standard deviation), fit on
/// the training split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub anim_mean: Vec<f32>,
    pub anim_std: Vec<f32>,
    pub pitch_mean: f32,
    pub pitch_std: f32,
    pub energy_mean: f32,
    pub energy_std: f32,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone, what: &str) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        log::warn!("{what}: no values; using mean 0, std 1");
        return (0.0, 1.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    if std < STD_FLOOR {
        log::warn!("{what}: zero variance, std floored at {STD_FLOOR}");
        (mean, STD_FLOOR)
    } else {
        (mean, std)
    }
}

impl NormStats {
    /// Animation stats over all frames; pitch over voiced frames; energy over all frames.
    pub fn fit(animations: &[&Tensor<f32>], features: &[&FeatureSequence]) -> Result<Self> {
        let channels = animations
            .first()
            .map(|a| a.cols())
            .ok_or_else(|| S2aError::InvalidInput("no animations to fit".into()))?;
        if animations.iter().any(|a| a.cols() != channels) {
            return Err(S2aError::InvalidInput("animation channel counts differ".into()));
        }
        let mut anim_mean = Vec::with_capacity(channels);
        let mut anim_std = Vec::with_capacity(channels);
        for c in 0..channels {
            let col = animations
                .iter()
                .flat_map(|a| (0..a.rows()).map(move |r| a.at(r, c) as f64));
            let (m, s) = mean_std(col, &format!("animation channel {c}"));
            anim_mean.push(m as f32);
            anim_std.push(s as f32);
        }
        let pitch = features
            .iter()
            .flat_map(|f| f.pitch.iter().filter(|&&p| p > 0.0).map(|&p| p as f64));
        let (pitch_mean, pitch_std) = mean_std(pitch, "pitch");
        let energy = features.iter().flat_map(|f| f.energy.iter().map(|&e| e as f64));
        let (energy_mean, energy_std) = mean_std(energy, "energy");
        Ok(NormStats {
            anim_mean,
            anim_std,
            pitch_mean: pitch_mean as f32,
            pitch_std: pitch_std as f32,
            energy_mean: energy_mean as f32,
            energy_std: energy_std as f32,
        })
    }

    fn check_channels(&self, t: &Tensor<f32>) -> Result<()> {
        if t.cols() != self.anim_mean.len() {
            return Err(S2aError::shape("normalize", t.shape(), &[self.anim_mean.len()]));
        }
        Ok(())
    }

    /// z-scores an animation matrix.
    pub fn apply_norm(&self, anim: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.check_channels(anim)?;
        let c = anim.cols();
        Ok(Tensor::from_fn(anim.shape(), |i| {
            let j = i % c;
            (anim.data()[i] - self.anim_mean[j]) / self.anim_std[j]
        }))
    }

    /// Exact inverse of [`NormStats::apply_norm`], no clamping.
    pub fn invert_norm(&self, norm: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.check_channels(norm)?;
        let c = norm.cols();
        Ok(Tensor::from_fn(norm.shape(), |i| {
            let j = i % c;
            norm.data()[i] * self.anim_std[j] + self.anim_mean[j]
        }))
    }

    /// Inverse normalization followed by clamping to blendshape range [0, 1].
    pub fn denormalize_animation(&self, norm: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut out = self.invert_norm(norm)?;
        out.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        Ok(out)
    }

    /// `T×2` matrix of normalized (pitch, energy). Unvoiced frames get pitch 0.
    pub fn prosody(&self, fs: &FeatureSequence) -> Tensor<f32> {
        let t = fs.len();
        let mut out = Tensor::zeros(&[t, 2]);
        for i in 0..t {
            let p = fs.pitch[i];
            let pn = if p > 0.0 {
                (p - self.pitch_mean) / self.pitch_std
            } else {
                0.0
            };
            out.set(i, 0, pn);
            out.set(i, 1, (fs.energy[i] - self.energy_mean) / self.energy_std);
        }
        out
    }
}

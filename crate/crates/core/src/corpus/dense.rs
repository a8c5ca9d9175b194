use super::utterance::SyntheticUtterance;
use crate::features::{FeatureKind, FeatureSequence, PPG_DIM};
use crate::model::DENSE_FEATURE_DIM;
use crate::numerics::{RngState, Tensor};

/// Seed of the projection shared by every utterance of every corpus.
const PROJECTION_SEED: u64 = 0x00de_45e0;

/// Speaker-entangled dense feature model: `x_t = P·ppg_t + s + ε_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseFeatureSpec {
    /// `64×20` projection.
    pub projection: Tensor<f32>,
    /// Standard deviation of the per-utterance speaker offset `s`.
    pub offset_std: f64,
    /// Standard deviation of the per-frame noise `ε_t`.
    pub noise_std: f64,
}

impl Default for DenseFeatureSpec {
    fn default() -> Self {
        let mut rng = RngState::new(PROJECTION_SEED);
        let scale = 1.0 / (DENSE_FEATURE_DIM as f64).sqrt();
        DenseFeatureSpec {
            projection: Tensor::from_fn(&[PPG_DIM, DENSE_FEATURE_DIM], |_| (rng.normal() * scale * 4.0) as f32),
            offset_std: 0.5,
            noise_std: 0.1,
        }
    }
}

impl DenseFeatureSpec {
    /// Projects `ppg` and adds `offset` (per column) and fresh noise.
    pub fn apply(&self, ppg: &Tensor<f32>, offset: &[f32], rng: &mut RngState) -> Tensor<f32> {
        let mut x = ppg.matmul(&self.projection).expect("PPG width matches projection");
        for r in 0..x.rows() {
            for (v, o) in x.row_mut(r).iter_mut().zip(offset) {
                *v += o + (self.noise_std * rng.normal()) as f32;
            }
        }
        x
    }

    pub fn sample_offset(&self, rng: &mut RngState) -> Vec<f32> {
        (0..DENSE_FEATURE_DIM).map(|_| (self.offset_std * rng.normal()) as f32).collect()
    }
}

/// Replaces the PPG stream with 20-dim dense features; prosody is unchanged.
pub fn gen_dense_feature_variant(u: &SyntheticUtterance, rng: &mut RngState) -> FeatureSequence {
    dense_features_with(&DenseFeatureSpec::default(), u, rng)
}

pub fn dense_features_with(spec: &DenseFeatureSpec, u: &SyntheticUtterance, rng: &mut RngState) -> FeatureSequence {
    let offset = spec.sample_offset(rng);
    let content = spec.apply(&u.features.ppg, &offset, rng);
    FeatureSequence {
        kind: FeatureKind::Dense,
        ppg: content,
        ..u.features.clone()
    }
}

use crate::error::{Result, S2aError};
use crate::numerics::{RngState, Tensor};

/// Posteriorgram dimension.
pub const PPG_DIM: usize = 64;

/// Synthetic posteriorgram generator standing in for an ASR bottleneck.
#[derive(Debug, Clone)]
pub struct PpgSynth {
    pub dim: usize,
    /// Gaussian smoothing width across phoneme boundaries, in frames.
    pub sigma: f64,
    /// Weight of the Dirichlet noise mixed into each row.
    pub noise: f64,
    pub dirichlet_alpha: f64,
}

impl Default for PpgSynth {
    fn default() -> Self {
        PpgSynth {
            dim: PPG_DIM,
            sigma: 2.0,
            noise: 0.02,
            dirichlet_alpha: 0.5,
        }
    }
}

impl PpgSynth {
    /// `phonemes`: `(phoneme_id, duration_frames)` pairs in order.
    pub fn synth(&self, phonemes: &[(usize, usize)], rng: &mut RngState) -> Result<Tensor<f32>> {
        if phonemes.is_empty() {
            return Err(S2aError::InvalidInput("empty phoneme sequence".into()));
        }
        if let Some(&(id, _)) = phonemes.iter().find(|(id, _)| *id >= self.dim) {
            return Err(S2aError::InvalidInput(format!(
                "phoneme id {id} out of range for dimension {}",
                self.dim
            )));
        }
        if phonemes.iter().any(|&(_, d)| d == 0) {
            return Err(S2aError::InvalidInput("phoneme durations must be at least 1".into()));
        }
        let labels: Vec<usize> = phonemes
            .iter()
            .flat_map(|&(id, d)| std::iter::repeat_n(id, d))
            .collect();
        let t = labels.len();
        let radius = (3.0 * self.sigma).ceil() as isize;
        let kernel: Vec<f64> = (-radius..=radius)
            .map(|o| (-(o * o) as f64 / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let mut out = Tensor::zeros(&[t, self.dim]);
        for i in 0..t {
            let mut row = vec![0.0f64; self.dim];
            let mut total = 0.0;
            for (ki, o) in (-radius..=radius).enumerate() {
                let j = i as isize + o;
                if j < 0 || j >= t as isize {
                    continue;
                }
                row[labels[j as usize]] += kernel[ki];
                total += kernel[ki];
            }
            row.iter_mut().for_each(|v| *v /= total);
            if self.noise > 0.0 {
                let noise = rng.dirichlet(self.dirichlet_alpha, self.dim);
                for (v, n) in row.iter_mut().zip(noise) {
                    *v = (1.0 - self.noise) * *v + self.noise * n;
                }
            }
            let sum: f64 = row.iter().sum();
            for (dst, v) in out.row_mut(i).iter_mut().zip(&row) {
                *dst = (v / sum) as f32;
            }
        }
        Ok(out)
    }
}

/// [`PpgSynth`] with default settings.
pub fn synth_ppg(phonemes: &[(usize, usize)], rng: &mut RngState) -> Result<Tensor<f32>> {
    PpgSynth::default().synth(phonemes, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_segment_noise_free() {
        let synth = PpgSynth {
            noise: 0.0,
            ..PpgSynth::default()
        };
        let p = synth.synth(&[(7, 10)], &mut RngState::new(1)).unwrap();
        assert_eq!(p.shape(), &[10, 64]);
        for r in 0..10 {
            assert!(p.at(r, 7) >= 0.99);
        }
    }

    #[test]
    fn boundary_mixes_both_phonemes() {
        let synth = PpgSynth {
            noise: 0.0,
            ..PpgSynth::default()
        };
        let p = synth.synth(&[(3, 10), (9, 10)], &mut RngState::new(1)).unwrap();
        // Gaussian weights at offsets -6..=6 around frame 10: frames 4..=9 are
        // phoneme 3, frames 10..=16 are phoneme 9.
        let w = |o: i32| (-(o * o) as f64 / 8.0).exp();
        let left: f64 = (-6..=-1).map(w).sum();
        let right: f64 = (0..=6).map(w).sum();
        let expect9 = right / (left + right);
        assert!((p.at(10, 9) as f64 - expect9).abs() < 1e-6);
        assert!(p.at(10, 3) > 0.1 && p.at(10, 9) > 0.1);
        // interior frames dominated by their label
        assert!(p.at(2, 3) > 0.9 && p.at(17, 9) > 0.9);
    }

    #[test]
    fn invalid_inputs() {
        let mut rng = RngState::new(0);
        assert!(synth_ppg(&[(64, 3)], &mut rng).is_err());
        assert!(synth_ppg(&[(1, 0)], &mut rng).is_err());
        assert!(synth_ppg(&[], &mut rng).is_err());
    }

    proptest! {
        #[test]
        fn rows_are_distributions(
            segs in prop::collection::vec((0usize..64, 1usize..12), 1..8),
            seed in any::<u64>(),
        ) {
            let p = synth_ppg(&segs, &mut RngState::new(seed)).unwrap();
            let expected_len: usize = segs.iter().map(|s| s.1).sum();
            prop_assert_eq!(p.rows(), expected_len);
            for r in 0..p.rows() {
                let s: f64 = p.row(r).iter().map(|&v| v as f64).sum();
                prop_assert!((s - 1.0).abs() < 1e-4);
                prop_assert!(p.row(r).iter().all(|&v| v >= 0.0));
            }
        }
    }
}

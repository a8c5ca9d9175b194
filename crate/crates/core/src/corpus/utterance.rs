use serde::{Deserialize, Serialize};

use super::viseme::VisemeTable;
use crate::animation::{AnimationSequence, JAW_OPEN, NUM_CHANNELS};
use crate::error::{Result, S2aError};
use crate::features::{animation_len, resample_linear, FeatureKind, FeatureSequence, PpgSynth, ANIMATION_FPS, FEATURE_RATE_HZ};
use crate::numerics::{RngState, Tensor};

pub const MIN_ENERGY_GAIN: f64 = 0.5;
pub const MAX_ENERGY_GAIN: f64 = 2.0;
/// Phoneme duration range in 50 Hz frames.
pub const MIN_DURATION: usize = 5;
pub const MAX_DURATION: usize = 25;
pub const PITCH_FLOOR_HZ: f64 = 80.0;
pub const PITCH_CEIL_HZ: f64 = 300.0;
/// Range of the loudness factor applied to jawOpen.
pub const JAW_FACTOR_RANGE: (f64, f64) = (0.6, 1.4);
/// Coarticulation kernel applied to the stepwise viseme targets.
pub const COARTICULATION_KERNEL: [f64; 5] = [1.0, 2.0, 3.0, 2.0, 1.0];

const ENERGY_NOISE_STD: f64 = 0.15;
const ENERGY_NOISE_AR: f64 = 0.8;
const PITCH_STEP_HZ: f64 = 4.0;
const SILENCE_PROB: f64 = 0.06;

/// Generation record kept alongside each synthetic utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceMeta {
    /// `(phoneme_id, duration_frames)` pairs.
    pub phonemes: Vec<(usize, usize)>,
    pub energy_gain: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticUtterance {
    pub features: FeatureSequence,
    pub animation: AnimationSequence,
    pub meta: UtteranceMeta,
}

/// Loudness factor on jawOpen for a log-power deviation `dev` from the
/// phoneme's nominal level: gains 0.5 and 2.0 map to the ends of
/// [`JAW_FACTOR_RANGE`].
pub fn jaw_factor(dev: f64) -> f64 {
    let (lo, hi) = JAW_FACTOR_RANGE;
    let slope = (hi - 1.0) / (2.0 * MAX_ENERGY_GAIN.ln());
    (1.0 + slope * dev).clamp(lo, hi)
}

/// Edge-renormalized 1-D convolution of each column of `x` with `kernel`.
fn smooth_columns(x: &Tensor<f32>, kernel: &[f64]) -> Tensor<f32> {
    let (t, c) = (x.rows(), x.cols());
    let r = (kernel.len() / 2) as isize;
    let mut out = Tensor::zeros(&[t, c]);
    for i in 0..t {
        let mut total = 0.0;
        let mut acc = vec![0.0f64; c];
        for (ki, o) in (-r..=r).enumerate() {
            let j = i as isize + o;
            if j < 0 || j >= t as isize {
                continue;
            }
            total += kernel[ki];
            for (a, v) in acc.iter_mut().zip(x.row(j as usize)) {
                *a += kernel[ki] * *v as f64;
            }
        }
        for (dst, a) in out.row_mut(i).iter_mut().zip(acc) {
            *dst = (a / total) as f32;
        }
    }
    out
}

/// Synthetic paired-data generator.
#[derive(Debug, Clone)]
pub struct Generator {
    pub table: VisemeTable,
    pub ppg: PpgSynth,
    /// Scale jawOpen by loudness; off gives a prosody-independent target.
    pub coupled_energy: bool,
}

impl Default for Generator {
    fn default() -> Self {
        Generator {
            table: VisemeTable::standard(),
            ppg: PpgSynth::default(),
            coupled_energy: true,
        }
    }
}

impl Generator {
    pub fn new(coupled_energy: bool) -> Self {
        Generator {
            coupled_energy,
            ..Generator::default()
        }
    }

    /// Random phoneme string without immediate repeats.
    pub fn sample_phonemes(&self, rng: &mut RngState, n_phonemes: usize) -> Vec<(usize, usize)> {
        let n = self.table.len();
        let mut out: Vec<(usize, usize)> = Vec::with_capacity(n_phonemes);
        while out.len() < n_phonemes {
            let id = if rng.uniform() < SILENCE_PROB { 0 } else { rng.int(1, n - 1) };
            let dur = rng.int(MIN_DURATION, MAX_DURATION);
            if out.last().is_some_and(|&(prev, _)| prev == id) {
                continue;
            }
            out.push((id, dur));
        }
        out
    }

    pub fn gen_utterance(&self, rng: &mut RngState, n_phonemes: usize, energy_gain: f64) -> Result<SyntheticUtterance> {
        if n_phonemes == 0 {
            return Err(S2aError::InvalidInput("n_phonemes must be >= 1".into()));
        }
        check_gain(energy_gain)?;
        let phonemes = self.sample_phonemes(rng, n_phonemes);
        self.render(rng, &phonemes, energy_gain)
    }

    /// Builds features and targets for a fixed phoneme string. Random draws do
    /// not depend on `energy_gain`, so equal seeds give identical PPGs and
    /// pitch for every gain.
    pub fn render(&self, rng: &mut RngState, phonemes: &[(usize, usize)], energy_gain: f64) -> Result<SyntheticUtterance> {
        check_gain(energy_gain)?;
        if let Some(&(id, _)) = phonemes.iter().find(|(id, _)| *id >= self.table.len()) {
            return Err(S2aError::InvalidInput(format!("unknown phoneme id {id}")));
        }
        let seed = rng.seed();
        let ppg = self.ppg.synth(phonemes, rng)?;
        let labels: Vec<usize> = phonemes.iter().flat_map(|&(id, d)| std::iter::repeat_n(id, d)).collect();
        let t1 = labels.len();
        let info = |id: usize| &self.table.phonemes[id];

        let mut walk = Vec::with_capacity(t1);
        let mut p = rng.range(100.0, 220.0);
        for _ in 0..t1 {
            p += PITCH_STEP_HZ * rng.normal();
            if p < PITCH_FLOOR_HZ {
                p = 2.0 * PITCH_FLOOR_HZ - p;
            }
            if p > PITCH_CEIL_HZ {
                p = 2.0 * PITCH_CEIL_HZ - p;
            }
            walk.push(p);
        }
        let walk = Tensor::from_fn(&[t1, 1], |i| walk[i] as f32);
        let walk = smooth_columns(&walk, &[1.0; 5]);
        let pitch: Vec<f32> = labels
            .iter()
            .enumerate()
            .map(|(i, &id)| {
                if info(id).voiced {
                    walk.data()[i].clamp(PITCH_FLOOR_HZ as f32, PITCH_CEIL_HZ as f32)
                } else {
                    0.0
                }
            })
            .collect();

        let base: Vec<f64> = labels.iter().map(|&id| info(id).class.base_energy(info(id).voiced)).collect();
        let innovation = ENERGY_NOISE_STD * (1.0 - ENERGY_NOISE_AR * ENERGY_NOISE_AR).sqrt();
        let mut noise = 0.0;
        let mut energy = Vec::with_capacity(t1);
        for (i, &b) in base.iter().enumerate() {
            let eps = rng.normal();
            noise = if i == 0 {
                ENERGY_NOISE_STD * eps
            } else {
                ENERGY_NOISE_AR * noise + innovation * eps
            };
            energy.push((b + 2.0 * energy_gain.ln() + noise) as f32);
        }

        let t2 = animation_len(t1);
        let mut steps = Tensor::zeros(&[t2, NUM_CHANNELS]);
        for a in 0..t2 {
            let pos = if t2 > 1 { a as f64 * (t1 - 1) as f64 / (t2 - 1) as f64 } else { 0.0 };
            let id = labels[(pos.round() as usize).min(t1 - 1)];
            steps.row_mut(a).copy_from_slice(&self.table.targets[id]);
        }
        let mut anim = smooth_columns(&steps, &COARTICULATION_KERNEL);
        if self.coupled_energy {
            let e = Tensor::from_fn(&[t1, 1], |i| energy[i]);
            let b = Tensor::from_fn(&[t1, 1], |i| base[i] as f32);
            let e = resample_linear(&e, t2, false)?;
            let b = resample_linear(&b, t2, false)?;
            for a in 0..t2 {
                let f = jaw_factor((e.data()[a] - b.data()[a]) as f64) as f32;
                let v = anim.at(a, JAW_OPEN) * f;
                anim.set(a, JAW_OPEN, v);
            }
        }
        anim.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));

        let features = FeatureSequence::new("utt", FeatureKind::Ppg, ppg, pitch, energy, FEATURE_RATE_HZ)?;
        let animation = AnimationSequence::new("utt", anim, ANIMATION_FPS)?;
        Ok(SyntheticUtterance {
            features,
            animation,
            meta: UtteranceMeta {
                phonemes: phonemes.to_vec(),
                energy_gain,
                seed,
            },
        })
    }
}

fn check_gain(gain: f64) -> Result<()> {
    if !(MIN_ENERGY_GAIN..=MAX_ENERGY_GAIN).contains(&gain) {
        return Err(S2aError::InvalidInput(format!(
            "energy_gain {gain} outside [{MIN_ENERGY_GAIN}, {MAX_ENERGY_GAIN}]"
        )));
    }
    Ok(())
}

/// [`Generator::gen_utterance`] with the default energy-coupled generator.
pub fn gen_utterance(rng: &mut RngState, n_phonemes: usize, energy_gain: f64) -> Result<SyntheticUtterance> {
    Generator::default().gen_utterance(rng, n_phonemes, energy_gain)
}

impl SyntheticUtterance {
    pub fn set_id(&mut self, id: &str) {
        self.features.utterance_id = id.to_string();
        self.animation.utterance_id = id.to_string();
    }
}

//! Deterministic synthetic paired corpus: phoneme strings rendered to PPG,
//! pitch and energy streams plus coarticulated 60 fps blendshape targets whose
//! jawOpen channel scales with loudness.
//!
//! Utterance `j` of a corpus with master seed `s` is generated from
//! `RngState::new(s).split(j)`; its dense-feature variant uses stream
//! `DENSE_STREAM_BASE + j`.

mod dense;
mod utterance;
mod viseme;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use dense::{dense_features_with, gen_dense_feature_variant, DenseFeatureSpec};
pub use utterance::{
    gen_utterance, jaw_factor, Generator, SyntheticUtterance, UtteranceMeta, COARTICULATION_KERNEL, JAW_FACTOR_RANGE,
    MAX_DURATION, MAX_ENERGY_GAIN, MIN_DURATION, MIN_ENERGY_GAIN, PITCH_CEIL_HZ, PITCH_FLOOR_HZ,
};
pub use viseme::{Phoneme, PhonemeClass, VisemeTable};

use crate::animation::AnimationSequence;
use crate::error::{Result, S2aError};
use crate::features::FeatureSequence;
use crate::numerics::RngState;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DENSE_STREAM_BASE: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    /// Paths are relative to the corpus directory.
    pub feature_path: String,
    pub animation_path: String,
    pub dense_feature_path: String,
    pub energy_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub coupled_energy: bool,
    pub split_ratios: [f64; 3],
    pub utterances: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path)
            .map_err(|e| S2aError::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.version != MANIFEST_VERSION {
            return Err(S2aError::Version(m.version));
        }
        Ok(m)
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.utterances.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.entries(split).count()
    }
}

/// Corpus generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub n_utterances: usize,
    pub split_ratios: [f64; 3],
    pub seed: u64,
    pub coupled_energy: bool,
    pub min_phonemes: usize,
    pub max_phonemes: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            n_utterances: 200,
            split_ratios: [0.8, 0.1, 0.1],
            seed: 0,
            coupled_energy: true,
            min_phonemes: 4,
            max_phonemes: 10,
        }
    }
}

/// Utterance counts per split. Every split with a positive ratio gets at
/// least one utterance; train takes the remainder.
pub fn split_counts(n: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    if n < 3 {
        return Err(S2aError::InvalidInput(format!("need at least 3 utterances, got {n}")));
    }
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(S2aError::InvalidInput(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let part = |r: f64| if r > 0.0 { ((n as f64 * r).round() as usize).max(1) } else { 0 };
    let (val, test) = (part(ratios[1]), part(ratios[2]));
    if val + test >= n {
        return Err(S2aError::InvalidInput(format!("split ratios {ratios:?} leave no training data")));
    }
    Ok([n - val - test, val, test])
}

fn log_uniform_gain(rng: &mut RngState) -> f64 {
    rng.range(MIN_ENERGY_GAIN.ln(), MAX_ENERGY_GAIN.ln()).exp()
}

/// Generates utterance `index` of a corpus with the given spec.
pub fn corpus_utterance(spec: &CorpusSpec, index: usize) -> Result<(SyntheticUtterance, FeatureSequence)> {
    let master = RngState::new(spec.seed);
    let mut rng = master.split(index as u64);
    let n_phonemes = rng.int(spec.min_phonemes, spec.max_phonemes);
    let gain = log_uniform_gain(&mut rng);
    let mut u = Generator::new(spec.coupled_energy).gen_utterance(&mut rng, n_phonemes, gain)?;
    u.set_id(&utterance_id(index));
    let dense = gen_dense_feature_variant(&u, &mut master.split(DENSE_STREAM_BASE + index as u64));
    Ok((u, dense))
}

pub fn utterance_id(index: usize) -> String {
    format!("utt_{index:05}")
}

/// Writes a corpus to `dir`: `<split>/<id>.feat.s2a1`, `.anim.s2a1`,
/// `.dense.s2a1` and `manifest.json`.
pub fn gen_corpus(dir: impl AsRef<Path>, spec: &CorpusSpec) -> Result<Manifest> {
    let dir = dir.as_ref();
    let counts = split_counts(spec.n_utterances, spec.split_ratios)?;
    if spec.min_phonemes == 0 || spec.min_phonemes > spec.max_phonemes {
        return Err(S2aError::InvalidInput("phoneme count range must be 1 <= min <= max".into()));
    }
    let mut utterances = Vec::with_capacity(spec.n_utterances);
    let mut index = 0;
    for (split, count) in Split::ALL.into_iter().zip(counts) {
        let sub = dir.join(split.name());
        fs::create_dir_all(&sub)?;
        for _ in 0..count {
            let (u, dense) = corpus_utterance(spec, index)?;
            let id = utterance_id(index);
            let rel = |suffix: &str| format!("{}/{id}.{suffix}.s2a1", split.name());
            let entry = ManifestEntry {
                id: id.clone(),
                split,
                feature_path: rel("feat"),
                animation_path: rel("anim"),
                dense_feature_path: rel("dense"),
                energy_gain: u.meta.energy_gain,
            };
            u.features.to_container()?.write(dir.join(&entry.feature_path))?;
            u.animation.to_container().write(dir.join(&entry.animation_path))?;
            dense.to_container()?.write(dir.join(&entry.dense_feature_path))?;
            utterances.push(entry);
            index += 1;
        }
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        seed: spec.seed,
        coupled_energy: spec.coupled_energy,
        split_ratios: spec.split_ratios,
        utterances,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(manifest)
}

/// One loaded training/evaluation pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: FeatureSequence,
    pub animation: AnimationSequence,
    pub energy_gain: f64,
}

/// A corpus directory with its manifest.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl Corpus {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        if !dir.is_dir() {
            return Err(S2aError::InvalidInput(format!("corpus directory {} not found", dir.display())));
        }
        let manifest = Manifest::load(&dir)?;
        Ok(Corpus { dir, manifest })
    }

    /// Loads a split; `dense` selects the dense-feature inputs.
    pub fn load_split(&self, split: Split, dense: bool) -> Result<Vec<Example>> {
        self.manifest
            .entries(split)
            .map(|e| {
                let fpath = if dense { &e.dense_feature_path } else { &e.feature_path };
                Ok(Example {
                    features: FeatureSequence::load(self.dir.join(fpath))?,
                    animation: AnimationSequence::load(self.dir.join(&e.animation_path))?,
                    energy_gain: e.energy_gain,
                })
            })
            .collect()
    }
}

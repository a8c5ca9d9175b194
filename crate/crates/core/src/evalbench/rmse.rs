use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::animation::{utterance_stem, AnimationSequence, CHANNEL_NAMES, CRUCIAL_CHANNELS, NUM_CHANNELS};
use crate::error::{Result, S2aError};

/// Root mean squared error over all frames of `channels`, in raw units.
pub fn rmse(pred: &AnimationSequence, reference: &AnimationSequence, channels: &[usize]) -> Result<f64> {
    let (sse, n) = sse(pred, reference, channels)?;
    Ok((sse / n as f64).sqrt())
}

fn sse(pred: &AnimationSequence, reference: &AnimationSequence, channels: &[usize]) -> Result<(f64, usize)> {
    if pred.len() != reference.len() {
        return Err(S2aError::InvalidInput(format!(
            "{}: predicted {} frames, reference has {}",
            reference.utterance_id,
            pred.len(),
            reference.len()
        )));
    }
    if channels.is_empty() {
        return Err(S2aError::InvalidInput("rmse needs at least one channel".into()));
    }
    if let Some(&c) = channels.iter().find(|&&c| c >= NUM_CHANNELS) {
        return Err(S2aError::InvalidInput(format!("channel {c} out of range")));
    }
    if pred.is_empty() {
        return Err(S2aError::EmptySequence(format!("{}: no frames", reference.utterance_id)));
    }
    let mut total = 0.0f64;
    for r in 0..pred.len() {
        let (p, q) = (pred.frames.row(r), reference.frames.row(r));
        for &c in channels {
            total += ((p[c] - q[c]) as f64).powi(2);
        }
    }
    Ok((total, pred.len() * channels.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRmse {
    pub id: String,
    pub entire: f64,
    pub crucial: f64,
}

/// Per-variant RMSE summary. `*_mean`/`*_std` are across utterances
/// (population std); `*_pooled` pools every frame of the set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseReport {
    pub name: String,
    pub entire_mean: f64,
    pub entire_std: f64,
    pub crucial_mean: f64,
    pub crucial_std: f64,
    pub entire_mean_x100: f64,
    pub entire_std_x100: f64,
    pub crucial_mean_x100: f64,
    pub crucial_std_x100: f64,
    pub entire_pooled: f64,
    pub crucial_pooled: f64,
    pub crucial_channels: Vec<String>,
    pub per_utterance: Vec<UtteranceRmse>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl RmseReport {
    /// Summarizes `(prediction, reference)` pairs.
    pub fn from_pairs(name: &str, pairs: &[(&AnimationSequence, &AnimationSequence)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(S2aError::InvalidInput(format!("{name}: no utterances to evaluate")));
        }
        let all: Vec<usize> = (0..NUM_CHANNELS).collect();
        let mut per = Vec::with_capacity(pairs.len());
        let (mut e_sse, mut e_n, mut c_sse, mut c_n) = (0.0, 0, 0.0, 0);
        for (pred, reference) in pairs {
            let (es, en) = sse(pred, reference, &all)?;
            let (cs, cn) = sse(pred, reference, &CRUCIAL_CHANNELS)?;
            e_sse += es;
            e_n += en;
            c_sse += cs;
            c_n += cn;
            per.push(UtteranceRmse {
                id: reference.utterance_id.clone(),
                entire: (es / en as f64).sqrt(),
                crucial: (cs / cn as f64).sqrt(),
            });
        }
        let (entire_mean, entire_std) = mean_std(&per.iter().map(|u| u.entire).collect::<Vec<_>>());
        let (crucial_mean, crucial_std) = mean_std(&per.iter().map(|u| u.crucial).collect::<Vec<_>>());
        Ok(RmseReport {
            name: name.to_string(),
            entire_mean,
            entire_std,
            crucial_mean,
            crucial_std,
            entire_mean_x100: 100.0 * entire_mean,
            entire_std_x100: 100.0 * entire_std,
            crucial_mean_x100: 100.0 * crucial_mean,
            crucial_std_x100: 100.0 * crucial_std,
            entire_pooled: (e_sse / e_n as f64).sqrt(),
            crucial_pooled: (c_sse / c_n as f64).sqrt(),
            crucial_channels: CRUCIAL_CHANNELS.iter().map(|&c| CHANNEL_NAMES[c].to_string()).collect(),
            per_utterance: per,
        })
    }
}

/// Aligned text table of several reports (values ×100, mean ± std).
pub fn format_table(rows: &[RmseReport]) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max("variant".len());
    let mut s = String::new();
    writeln!(
        s,
        "{:<width$}  {:>17}  {:>17}  {:>9}  {:>9}  {:>5}",
        "variant", "entire x100", "crucial x100", "entire", "crucial", "utts"
    )
    .unwrap();
    for r in rows {
        writeln!(
            s,
            "{:<width$}  {:>8.3} ± {:>6.3}  {:>8.3} ± {:>6.3}  {:>9.5}  {:>9.5}  {:>5}",
            r.name,
            r.entire_mean_x100,
            r.entire_std_x100,
            r.crucial_mean_x100,
            r.crucial_std_x100,
            r.entire_mean,
            r.crucial_mean,
            r.per_utterance.len()
        )
        .unwrap();
    }
    s
}

/// Reads every `.csv` and `.anim.s2a1` file of `dir`, keyed by file stem.
pub fn load_animation_dir(dir: impl AsRef<Path>) -> Result<BTreeMap<String, AnimationSequence>> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(S2aError::InvalidInput(format!("{} is not a directory", dir.display())));
    }
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if !(name.ends_with(".csv") || name.ends_with(".anim.s2a1")) {
            continue;
        }
        let mut anim = AnimationSequence::load(&path)?;
        let id = utterance_stem(&path);
        anim.utterance_id = id.clone();
        out.insert(id, anim);
    }
    Ok(out)
}

/// Pairs predictions with references by utterance id. Any id present on only
/// one side is an error that lists all of them.
pub fn match_pairs<'a>(
    pred: &'a BTreeMap<String, AnimationSequence>,
    reference: &'a BTreeMap<String, AnimationSequence>,
) -> Result<Vec<(&'a AnimationSequence, &'a AnimationSequence)>> {
    let missing_pred: Vec<&str> = reference.keys().filter(|k| !pred.contains_key(*k)).map(String::as_str).collect();
    let missing_ref: Vec<&str> = pred.keys().filter(|k| !reference.contains_key(*k)).map(String::as_str).collect();
    if !missing_pred.is_empty() || !missing_ref.is_empty() {
        let mut msg = String::from("unmatched utterance ids");
        if !missing_pred.is_empty() {
            write!(msg, "; no prediction for: {}", missing_pred.join(", ")).unwrap();
        }
        if !missing_ref.is_empty() {
            write!(msg, "; no reference for: {}", missing_ref.join(", ")).unwrap();
        }
        return Err(S2aError::Bench(msg));
    }
    if reference.is_empty() {
        return Err(S2aError::Bench("no animations found".into()));
    }
    Ok(reference.iter().map(|(k, r)| (&pred[k], r)).collect())
}

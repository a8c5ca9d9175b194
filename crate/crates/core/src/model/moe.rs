//! Top-k gated mixture of experts with per-frame routing.
//!
//! For frame `t` with gate logits `G(h_t)`, all but the `k` largest logits are
//! set to `-inf`, a softmax turns the survivors into routing probabilities,
//! and the layer output is `o_t = Σ_i Prob_i(h_t) · E_i(h)_t`. Each expert is
//! `fc(ReLU(conv1d_same(h)))`; only frames routed to an expert are evaluated
//! by it, but its convolution window still reads the neighbouring frames of
//! `h` regardless of where those frames were routed.

use std::cmp::Ordering;

use super::params::Bound;
use crate::error::{Result, S2aError};
use crate::numerics::{Graph, Real, Var};

/// Indices of the `k` largest scores, best first; ties go to the lower index.
pub fn topk_indices<F: Real>(scores: &[F], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > scores.len() {
        return Err(S2aError::Config(format!("k = {k} outside 1..={}", scores.len())));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(S2aError::InvalidInput("gate scores must be finite".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    Ok(idx)
}

/// Keeps the top-k entries of `g` and sets the rest to `-inf`.
pub fn topk_scores<F: Real>(g: &[F], k: usize) -> Result<Vec<F>> {
    let keep = topk_indices(g, k)?;
    let mut out = vec![F::neg_infinity(); g.len()];
    for i in keep {
        out[i] = g[i];
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct ExpertWeights {
    /// `(K·d)×hidden` view of the `K×d×hidden` kernel.
    pub conv_w: Var,
    pub conv_b: Var,
    pub fc_w: Var,
    pub fc_b: Var,
}

impl ExpertWeights {
    pub fn from_bound<F: Real>(b: &Bound<'_, F>, prefix: &str) -> Result<Self> {
        let v = |n: &str| b.var(&format!("{prefix}.{n}"));
        Ok(ExpertWeights {
            conv_w: v("conv.w")?,
            conv_b: v("conv.b")?,
            fc_w: v("fc.w")?,
            fc_b: v("fc.b")?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct MoeWeights {
    pub gate_w: Var,
    pub gate_b: Var,
    pub experts: Vec<ExpertWeights>,
}

impl MoeWeights {
    pub fn from_bound<F: Real>(b: &Bound<'_, F>, prefix: &str, n_experts: usize) -> Result<Self> {
        Ok(MoeWeights {
            gate_w: b.var(&format!("{prefix}.gate.w"))?,
            gate_b: b.var(&format!("{prefix}.gate.b"))?,
            experts: (0..n_experts)
                .map(|i| ExpertWeights::from_bound(b, &format!("{prefix}.expert.{i}")))
                .collect::<Result<_>>()?,
        })
    }
}

/// `fc(ReLU(conv1d_same(h)))` evaluated at `frames` (all frames when `None`).
pub fn expert_forward<F: Real>(
    g: &mut Graph<'_, F>,
    h: Var,
    e: &ExpertWeights,
    frames: Option<Vec<usize>>,
    kernel: usize,
) -> Result<Var> {
    let win = g.frame_windows(h, frames, kernel)?;
    let hid = g.linear(win, e.conv_w, e.conv_b)?;
    let hid = g.relu(hid);
    g.linear(hid, e.fc_w, e.fc_b)
}

pub struct MoeOutput {
    pub out: Var,
    /// `T×n` routing probabilities (exactly k nonzeros per row).
    pub probs: Var,
    /// Selected experts per frame, best first.
    pub selected: Vec<Vec<usize>>,
    /// Squared coefficient of variation of expert importance over valid frames.
    pub importance_cv2: Option<Var>,
}

/// Sparse-dispatch MOE layer over `h: T×d`.
///
/// `valid_len` restricts the optional importance statistic to real frames.
pub fn moe_layer<F: Real>(
    g: &mut Graph<'_, F>,
    h: Var,
    w: &MoeWeights,
    k: usize,
    kernel: usize,
    importance: bool,
    valid_len: Option<usize>,
) -> Result<MoeOutput> {
    let t = g.shape(h)[0];
    let n = w.experts.len();
    let logits = g.linear(h, w.gate_w, w.gate_b)?;
    let mut mask = vec![F::neg_infinity(); t * n];
    let mut selected = Vec::with_capacity(t);
    let mut routed: Vec<Vec<usize>> = vec![Vec::new(); n];
    {
        let lv = g.value(logits);
        for f in 0..t {
            let keep = topk_indices(&lv[f * n..(f + 1) * n], k)?;
            for &e in &keep {
                mask[f * n + e] = F::zero();
                routed[e].push(f);
            }
            selected.push(keep);
        }
    }
    let scores = g.add_const(logits, &mask)?;
    let probs = g.softmax_lastdim(scores)?;

    let mut out: Option<Var> = None;
    for (e, frames) in routed.into_iter().enumerate() {
        if frames.is_empty() {
            continue;
        }
        let y = expert_forward(g, h, &w.experts[e], Some(frames.clone()), kernel)?;
        let p = g.select_entries(probs, frames.iter().map(|&f| (f, e)).collect())?;
        let y = g.row_scale(y, p)?;
        let part = g.scatter_rows(y, frames, t)?;
        out = Some(match out {
            Some(acc) => g.add(acc, part)?,
            None => part,
        });
    }
    let out = out.ok_or_else(|| S2aError::InvalidInput("no frames routed".into()))?;

    let importance_cv2 = if importance {
        let valid = valid_len.unwrap_or(t);
        let row = crate::numerics::Tensor::from_fn(&[1, t], |i| if i < valid { F::one() } else { F::zero() });
        let ones = g.input(row);
        let imp = g.matmul(ones, probs)?;
        let total = g.sum(imp);
        let sq = g.mul(imp, imp)?;
        let sq = g.sum(sq);
        let total_sq = g.mul(total, total)?;
        let ratio = g.div(sq, total_sq)?;
        // n·Σx²/(Σx)² − 1 = CV²; the constant offset carries no gradient
        Some(g.scale(ratio, F::lit(n as f64))?)
    } else {
        None
    };
    Ok(MoeOutput {
        out,
        probs,
        selected,
        importance_cv2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topk_examples() {
        let inf = f64::NEG_INFINITY;
        assert_eq!(topk_scores(&[2.0, 1.0, 0.0, -1.0], 2).unwrap(), vec![2.0, 1.0, inf, inf]);
        let g = [0.3, -2.0, 5.0];
        assert_eq!(topk_scores(&g, 3).unwrap(), g.to_vec());
        let flat = vec![1.0f32; 48];
        let s = topk_scores(&flat, 16).unwrap();
        assert!(s[..16].iter().all(|v| v.is_finite()));
        assert!(s[16..].iter().all(|v| *v == f32::NEG_INFINITY));
    }

    #[test]
    fn topk_rejects_bad_k() {
        assert!(topk_scores(&[1.0f32, 2.0], 0).is_err());
        assert!(topk_scores(&[1.0f32, 2.0], 3).is_err());
        assert!(topk_scores(&[1.0f32, f32::NAN], 1).is_err());
    }
}

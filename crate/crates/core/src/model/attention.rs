use super::params::Bound;
use crate::error::{Result, S2aError};
use crate::numerics::{Graph, Real, Var};

/// Projection weights of one self-attention sublayer.
#[derive(Debug, Clone, Copy)]
pub struct AttentionWeights {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

impl AttentionWeights {
    pub fn from_bound<F: Real>(b: &Bound<'_, F>, prefix: &str) -> Result<Self> {
        let v = |n: &str| b.var(&format!("{prefix}.{n}"));
        Ok(AttentionWeights {
            wq: v("wq")?,
            bq: v("bq")?,
            wk: v("wk")?,
            bk: v("bk")?,
            wv: v("wv")?,
            bv: v("bv")?,
            wo: v("wo")?,
            bo: v("bo")?,
        })
    }
}

pub struct AttentionOutput {
    pub out: Var,
    /// Per-head `T×T` attention probabilities.
    pub weights: Vec<Var>,
}

/// Additive key mask: `-inf` on columns at or beyond `valid_len`.
pub(crate) fn key_mask<F: Real>(t: usize, valid_len: usize) -> Vec<F> {
    (0..t * t)
        .map(|i| if i % t >= valid_len { F::neg_infinity() } else { F::zero() })
        .collect()
}

/// Scaled dot-product attention over the whole (non-causal) sequence of
/// `x: T×d`. Keys at positions `>= valid_len` are masked out.
pub fn multi_head_self_attention<F: Real>(
    g: &mut Graph<'_, F>,
    x: Var,
    w: &AttentionWeights,
    n_heads: usize,
    valid_len: Option<usize>,
) -> Result<AttentionOutput> {
    let shape = g.shape(x).to_vec();
    let (t, d) = (shape[0], shape[1]);
    if n_heads == 0 || d % n_heads != 0 {
        return Err(S2aError::Config(format!("d_model {d} not divisible by {n_heads} heads")));
    }
    let valid = valid_len.unwrap_or(t);
    if valid > t || valid == 0 {
        return Err(S2aError::InvalidInput(format!("valid length {valid} outside 1..={t}")));
    }
    let dh = d / n_heads;
    let q = g.linear(x, w.wq, w.bq)?;
    let k = g.linear(x, w.wk, w.bk)?;
    let v = g.linear(x, w.wv, w.bv)?;
    let mask = (valid < t).then(|| key_mask::<F>(t, valid));
    let scale = F::one() / F::lit(dh as f64).sqrt();
    let mut heads = Vec::with_capacity(n_heads);
    let mut weights = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = g.slice_cols(q, h * dh, dh)?;
        let kh = g.slice_cols(k, h * dh, dh)?;
        let vh = g.slice_cols(v, h * dh, dh)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let mut scores = g.scale(scores, scale)?;
        if let Some(m) = &mask {
            scores = g.add_const(scores, m)?;
        }
        let att = g.softmax_lastdim(scores)?;
        weights.push(att);
        heads.push(g.matmul(att, vh)?);
    }
    let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };
    let out = g.linear(cat, w.wo, w.bo)?;
    Ok(AttentionOutput { out, weights })
}

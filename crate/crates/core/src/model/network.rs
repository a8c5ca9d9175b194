//! Content encoder, prosody fusion and expert decoder.

use super::attention::{multi_head_self_attention, AttentionWeights};
use super::config::ModelConfig;
use super::moe::{expert_forward, moe_layer, ExpertWeights, MoeOutput, MoeWeights};
use super::params::{glorot, ones, zeros, Bound, Params};
use super::pe::positional_encoding;
use crate::error::{Result, S2aError};
use crate::numerics::{Graph, Real, RngState, Tensor, Var};

const LN_EPS: f64 = 1e-5;

/// Model inputs at the animation frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput<F: Real = f32> {
    /// `T×ppg_dim` content features.
    pub content: Tensor<F>,
    /// `T×2` normalized (pitch, energy).
    pub prosody: Tensor<F>,
    /// Frames at or beyond this index are padding.
    pub valid_len: usize,
}

impl<F: Real> ModelInput<F> {
    pub fn new(content: Tensor<F>, prosody: Tensor<F>) -> Result<Self> {
        let valid_len = content.rows();
        let input = ModelInput {
            content,
            prosody,
            valid_len,
        };
        input.check()?;
        Ok(input)
    }

    pub fn len(&self) -> usize {
        self.content.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self) -> Result<()> {
        if self.content.rank() != 2 || self.prosody.rank() != 2 {
            return Err(S2aError::InvalidInput("model inputs must be matrices".into()));
        }
        if self.content.rows() != self.prosody.rows() {
            return Err(S2aError::shape("model input", self.content.shape(), self.prosody.shape()));
        }
        if self.valid_len == 0 || self.valid_len > self.content.rows() {
            return Err(S2aError::InvalidInput(format!(
                "valid length {} outside 1..={}",
                self.valid_len,
                self.content.rows()
            )));
        }
        Ok(())
    }

    /// Pads both streams with zero rows up to `len` frames.
    pub fn padded(&self, len: usize) -> ModelInput<F> {
        ModelInput {
            content: self.content.pad_rows(len),
            prosody: self.prosody.pad_rows(len),
            valid_len: self.valid_len,
        }
    }

    pub fn cast<G: Real>(&self) -> ModelInput<G> {
        ModelInput {
            content: self.content.cast(),
            prosody: self.prosody.cast(),
            valid_len: self.valid_len,
        }
    }
}

pub struct ForwardOutput {
    /// `T×out_dim` prediction in normalized target space.
    pub out: Var,
    /// Weighted auxiliary loss (importance loss) if enabled.
    pub aux_loss: Option<Var>,
    pub moe: Vec<MoeOutput>,
}

/// Architecture description plus parameter construction.
#[derive(Debug, Clone, PartialEq)]
pub struct S2aModel {
    pub cfg: ModelConfig,
}

struct Dropout<'r> {
    rate: f64,
    rng: Option<&'r mut RngState>,
}

impl Dropout<'_> {
    fn apply<F: Real>(&mut self, g: &mut Graph<'_, F>, x: Var) -> Result<Var> {
        let Some(rng) = self.rng.as_deref_mut() else {
            return Ok(x);
        };
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let keep = F::lit(1.0 / (1.0 - self.rate));
        let n: usize = g.shape(x).iter().product();
        let mask = (0..n)
            .map(|_| if rng.uniform() < self.rate { F::zero() } else { keep })
            .collect();
        g.mul_const(x, mask)
    }
}

impl S2aModel {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(S2aModel { cfg })
    }

    /// Freshly initialized parameters under canonical names.
    pub fn init_params<F: Real>(&self, rng: &mut RngState) -> Params<F> {
        let c = &self.cfg;
        let d = c.d_model;
        let mut p = Params::default();
        let mut put = |name: String, t: Tensor<F>| p.insert(name, t).expect("parameter names are unique");
        put("in_proj.w".into(), glorot(rng, &[c.ppg_dim, d], c.ppg_dim, d));
        put("in_proj.b".into(), zeros(&[d]));
        let attn = |put: &mut dyn FnMut(String, Tensor<F>), rng: &mut RngState, pre: &str| {
            for m in ["q", "k", "v", "o"] {
                put(format!("{pre}.attn.w{m}"), glorot(rng, &[d, d], d, d));
                put(format!("{pre}.attn.b{m}"), zeros(&[d]));
            }
        };
        for i in 0..c.n_enc_blocks {
            let pre = format!("enc.{i}");
            put(format!("{pre}.ln1.g"), ones(&[d]));
            put(format!("{pre}.ln1.b"), zeros(&[d]));
            attn(&mut put, rng, &pre);
            put(format!("{pre}.ln2.g"), ones(&[d]));
            put(format!("{pre}.ln2.b"), zeros(&[d]));
            let h = c.enc_ffn_hidden;
            put(format!("{pre}.ffn.w1"), glorot(rng, &[d, h], d, h));
            put(format!("{pre}.ffn.b1"), zeros(&[h]));
            put(format!("{pre}.ffn.w2"), glorot(rng, &[h, d], h, d));
            put(format!("{pre}.ffn.b2"), zeros(&[d]));
        }
        put("enc.ln_f.g".into(), ones(&[d]));
        put("enc.ln_f.b".into(), zeros(&[d]));
        let din = d + c.prosody_dim;
        put("dec_in.w".into(), glorot(rng, &[din, d], din, d));
        put("dec_in.b".into(), zeros(&[d]));
        let k = c.expert_kernel;
        let expert = |put: &mut dyn FnMut(String, Tensor<F>), rng: &mut RngState, pre: &str, h: usize| {
            put(format!("{pre}.conv.w"), glorot(rng, &[k, d, h], k * d, h));
            put(format!("{pre}.conv.b"), zeros(&[h]));
            put(format!("{pre}.fc.w"), glorot(rng, &[h, d], h, d));
            put(format!("{pre}.fc.b"), zeros(&[d]));
        };
        for i in 0..c.n_dec_blocks {
            let pre = format!("dec.{i}");
            put(format!("{pre}.ln1.g"), ones(&[d]));
            put(format!("{pre}.ln1.b"), zeros(&[d]));
            attn(&mut put, rng, &pre);
            put(format!("{pre}.ln2.g"), ones(&[d]));
            put(format!("{pre}.ln2.b"), zeros(&[d]));
            if c.variant.uses_moe() {
                put(format!("{pre}.moe.gate.w"), glorot(rng, &[d, c.n_experts], d, c.n_experts));
                put(format!("{pre}.moe.gate.b"), zeros(&[c.n_experts]));
                for j in 0..c.n_experts {
                    expert(&mut put, rng, &format!("{pre}.moe.expert.{j}"), c.expert_hidden);
                }
            } else {
                expert(&mut put, rng, &format!("{pre}.ffn"), c.dense_hidden());
            }
        }
        put("dec.ln_f.g".into(), ones(&[d]));
        put("dec.ln_f.b".into(), zeros(&[d]));
        put("head.w".into(), glorot(rng, &[d, c.out_dim], d, c.out_dim));
        put("head.b".into(), zeros(&[c.out_dim]));
        p
    }

    /// Checks that `params` has every tensor this architecture reads, with
    /// the expected shapes.
    pub fn check_params<F: Real>(&self, params: &Params<F>) -> Result<()> {
        let reference: Params<F> = self.init_params(&mut RngState::new(0));
        if reference.len() != params.len() {
            return Err(S2aError::Config(format!(
                "expected {} parameter tensors, found {}",
                reference.len(),
                params.len()
            )));
        }
        for (name, t) in reference.iter() {
            let got = params.get(name)?;
            if got.shape() != t.shape() {
                return Err(S2aError::shape("parameter", got.shape(), t.shape()));
            }
        }
        Ok(())
    }

    /// Runs the network on `input`, registering it as a graph constant.
    pub fn forward_input<'a, F: Real>(
        &self,
        g: &mut Graph<'a, F>,
        params: &Bound<'_, F>,
        input: &'a ModelInput<F>,
        dropout_rng: Option<&mut RngState>,
    ) -> Result<ForwardOutput> {
        input.check()?;
        let content = g.constant_ref(&input.content);
        let prosody = g.constant_ref(&input.prosody);
        self.forward(g, params, content, prosody, input.valid_len, dropout_rng)
    }

    /// `content: T×ppg_dim`, `prosody: T×2`; frames `>= valid_len` are padding.
    pub fn forward<'a, F: Real>(
        &self,
        g: &mut Graph<'a, F>,
        params: &Bound<'_, F>,
        content: Var,
        prosody: Var,
        valid_len: usize,
        dropout_rng: Option<&mut RngState>,
    ) -> Result<ForwardOutput> {
        let c = &self.cfg;
        let cs = g.shape(content).to_vec();
        let ps = g.shape(prosody).to_vec();
        if cs.len() != 2 || ps.len() != 2 || cs[0] != ps[0] {
            return Err(S2aError::shape("forward", &cs, &ps));
        }
        if cs[1] != c.ppg_dim {
            return Err(S2aError::InvalidInput(format!(
                "feature dimension {} does not match model input dimension {}",
                cs[1], c.ppg_dim
            )));
        }
        if ps[1] != c.prosody_dim {
            return Err(S2aError::shape("prosody", &ps, &[cs[0], c.prosody_dim]));
        }
        let t = cs[0];
        if valid_len == 0 || valid_len > t {
            return Err(S2aError::InvalidInput(format!("valid length {valid_len} outside 1..={t}")));
        }
        let valid = (valid_len < t).then_some(valid_len);
        let row_mask: Option<Vec<F>> = valid.map(|v| {
            (0..t * c.d_model)
                .map(|i| if i / c.d_model < v { F::one() } else { F::zero() })
                .collect()
        });
        let mut drop = Dropout {
            rate: c.dropout,
            rng: dropout_rng,
        };
        let v = |n: &str| params.var(n);
        let eps = F::lit(LN_EPS);

        let x = g.linear(content, v("in_proj.w")?, v("in_proj.b")?)?;
        let pe = positional_encoding::<F>(t, c.d_model)?;
        let mut x = g.add_const(x, pe.data())?;

        for i in 0..c.n_enc_blocks {
            let pre = format!("enc.{i}");
            x = self.attention_sublayer(g, params, &pre, x, valid, &mut drop)?;
            let y = g.layer_norm(x, v(&format!("{pre}.ln2.g"))?, v(&format!("{pre}.ln2.b"))?, eps)?;
            let y = g.linear(y, v(&format!("{pre}.ffn.w1"))?, v(&format!("{pre}.ffn.b1"))?)?;
            let y = g.relu(y);
            let y = g.linear(y, v(&format!("{pre}.ffn.w2"))?, v(&format!("{pre}.ffn.b2"))?)?;
            let y = drop.apply(g, y)?;
            x = g.add(x, y)?;
        }
        let x = g.layer_norm(x, v("enc.ln_f.g")?, v("enc.ln_f.b")?, eps)?;

        let prosody = if c.variant.uses_prosody() {
            prosody
        } else {
            g.input(Tensor::zeros(&ps))
        };
        let z = g.concat_cols(&[x, prosody])?;
        let mut x = g.linear(z, v("dec_in.w")?, v("dec_in.b")?)?;

        let mut moe_outs = Vec::new();
        let mut aux: Option<Var> = None;
        for i in 0..c.n_dec_blocks {
            let pre = format!("dec.{i}");
            x = self.attention_sublayer(g, params, &pre, x, valid, &mut drop)?;
            let mut y = g.layer_norm(x, v(&format!("{pre}.ln2.g"))?, v(&format!("{pre}.ln2.b"))?, eps)?;
            if let Some(m) = &row_mask {
                // keeps the convolution windows of real frames free of padding
                y = g.mul_const(y, m.clone())?;
            }
            let y = if c.variant.uses_moe() {
                let w = MoeWeights::from_bound(params, &format!("{pre}.moe"), c.n_experts)?;
                let want_imp = c.importance_loss > 0.0;
                let out = moe_layer(g, y, &w, c.top_k, c.expert_kernel, want_imp, Some(valid_len))?;
                if let Some(imp) = out.importance_cv2 {
                    let term = g.scale(imp, F::lit(c.importance_loss))?;
                    aux = Some(match aux {
                        Some(a) => g.add(a, term)?,
                        None => term,
                    });
                }
                let o = out.out;
                moe_outs.push(out);
                o
            } else {
                let w = ExpertWeights::from_bound(params, &format!("{pre}.ffn"))?;
                expert_forward(g, y, &w, None, c.expert_kernel)?
            };
            let y = drop.apply(g, y)?;
            x = g.add(x, y)?;
        }
        let x = g.layer_norm(x, v("dec.ln_f.g")?, v("dec.ln_f.b")?, eps)?;
        let out = g.linear(x, v("head.w")?, v("head.b")?)?;
        Ok(ForwardOutput {
            out,
            aux_loss: aux,
            moe: moe_outs,
        })
    }

    fn attention_sublayer<F: Real>(
        &self,
        g: &mut Graph<'_, F>,
        params: &Bound<'_, F>,
        pre: &str,
        x: Var,
        valid: Option<usize>,
        drop: &mut Dropout<'_>,
    ) -> Result<Var> {
        let eps = F::lit(LN_EPS);
        let y = g.layer_norm(x, params.var(&format!("{pre}.ln1.g"))?, params.var(&format!("{pre}.ln1.b"))?, eps)?;
        let w = AttentionWeights::from_bound(params, &format!("{pre}.attn"))?;
        let a = multi_head_self_attention(g, y, &w, self.cfg.n_heads, valid)?;
        let a = drop.apply(g, a.out)?;
        g.add(x, a)
    }

    /// Inference without dropout; returns the `T×out_dim` normalized output.
    pub fn predict<F: Real>(&self, params: &Params<F>, input: &ModelInput<F>) -> Result<Tensor<F>> {
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false)?;
        let out = self.forward_input(&mut g, &bound, input, None)?;
        Ok(g.tensor(out.out))
    }
}

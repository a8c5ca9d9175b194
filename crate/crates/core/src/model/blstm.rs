//! Bidirectional LSTM baseline used for inference timing.
//!
//! Gate order inside the stacked `4H` dimension is input, forget, cell, output.

use super::params::glorot;
use crate::error::{Result, S2aError};
use crate::numerics::{Real, RngState, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmDirection {
    /// `D×4H` input weights.
    pub wx: Tensor<f32>,
    /// `H×4H` recurrent weights.
    pub wh: Tensor<f32>,
    /// `4H` bias.
    pub b: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Blstm {
    pub input_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    pub fwd: LstmDirection,
    pub bwd: LstmDirection,
    /// `2H×out_dim` output head.
    pub head_w: Tensor<f32>,
    pub head_b: Vec<f32>,
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

impl LstmDirection {
    fn init(rng: &mut RngState, d: usize, h: usize) -> Self {
        let mut b = vec![0.0; 4 * h];
        // forget-gate bias of 1 is the usual starting point
        b[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
        LstmDirection {
            wx: glorot(rng, &[d, 4 * h], d, 4 * h),
            wh: glorot(rng, &[h, 4 * h], h, 4 * h),
            b,
        }
    }

    /// Runs the recurrence over `x` (already projected to `T×4H`, bias
    /// included), writing hidden states into columns `[offset, offset+H)` of
    /// `out` (`T×2H`).
    fn run(&self, xproj: &Tensor<f32>, reverse: bool, out: &mut Tensor<f32>, offset: usize) {
        let t_len = xproj.rows();
        let h = self.wh.rows();
        let mut hs = vec![0.0f32; h];
        let mut cs = vec![0.0f32; h];
        let mut pre = vec![0.0f32; 4 * h];
        for step in 0..t_len {
            let t = if reverse { t_len - 1 - step } else { step };
            pre.copy_from_slice(xproj.row(t));
            row_gemm_acc(&hs, &self.wh, &mut pre);
            for j in 0..h {
                let i = sigmoid(pre[j]);
                let f = sigmoid(pre[h + j]);
                let g = pre[2 * h + j].tanh();
                let o = sigmoid(pre[3 * h + j]);
                cs[j] = f * cs[j] + i * g;
                hs[j] = o * cs[j].tanh();
            }
            out.row_mut(t)[offset..offset + h].copy_from_slice(&hs);
        }
    }
}

/// `acc += x · w` for a single row vector.
fn row_gemm_acc(x: &[f32], w: &Tensor<f32>, acc: &mut [f32]) {
    f32::gemm(1, w.rows(), w.cols(), x, false, w.data(), false, 1.0, acc);
}

impl Blstm {
    pub fn new(input_dim: usize, hidden: usize, out_dim: usize, rng: &mut RngState) -> Result<Self> {
        if input_dim == 0 || hidden == 0 || out_dim == 0 {
            return Err(S2aError::Config("BLSTM dimensions must be positive".into()));
        }
        let fwd = LstmDirection::init(rng, input_dim, hidden);
        let bwd = LstmDirection::init(rng, input_dim, hidden);
        Ok(Blstm {
            input_dim,
            hidden,
            out_dim,
            fwd,
            bwd,
            head_w: glorot(rng, &[2 * hidden, out_dim], 2 * hidden, out_dim),
            head_b: vec![0.0; out_dim],
        })
    }

    pub fn param_count_for(input_dim: usize, hidden: usize, out_dim: usize) -> usize {
        let per_dir = input_dim * 4 * hidden + hidden * 4 * hidden + 4 * hidden;
        2 * per_dir + 2 * hidden * out_dim + out_dim
    }

    pub fn param_count(&self) -> usize {
        Self::param_count_for(self.input_dim, self.hidden, self.out_dim)
    }

    /// Hidden size whose parameter count is closest to `target`.
    pub fn hidden_for_budget(input_dim: usize, out_dim: usize, target: usize) -> usize {
        let mut best = 1;
        let mut best_gap = usize::MAX;
        let mut h = 1;
        loop {
            let count = Self::param_count_for(input_dim, h, out_dim);
            let gap = count.abs_diff(target);
            if gap < best_gap {
                best = h;
                best_gap = gap;
            }
            if count > target {
                return best;
            }
            h += 1;
        }
    }

    /// `x: T×input_dim` → `T×out_dim`.
    pub fn forward(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        if x.rank() != 2 || x.cols() != self.input_dim {
            return Err(S2aError::shape("blstm", x.shape(), &[x.rows(), self.input_dim]));
        }
        let t = x.rows();
        let h = self.hidden;
        let mut states = Tensor::zeros(&[t, 2 * h]);
        for (dir, reverse, offset) in [(&self.fwd, false, 0), (&self.bwd, true, h)] {
            let mut proj = x.matmul(&dir.wx)?;
            for r in 0..t {
                proj.row_mut(r).iter_mut().zip(&dir.b).for_each(|(p, b)| *p += b);
            }
            dir.run(&proj, reverse, &mut states, offset);
        }
        let mut out = states.matmul(&self.head_w)?;
        for r in 0..t {
            out.row_mut(r).iter_mut().zip(&self.head_b).for_each(|(o, b)| *o += b);
        }
        Ok(out)
    }
}

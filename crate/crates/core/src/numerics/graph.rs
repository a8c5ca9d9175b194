//! Tape-based reverse-mode autodiff.
//!
//! A [`Graph`] records every op as a node in a linear arena; node indices are
//! topologically ordered by construction, so backward is a single reverse
//! sweep. Parameters enter the tape by reference and are never copied.

use std::borrow::Cow;

use super::tensor::{Real, Tensor};
use crate::error::{Result, S2aError};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddBias(Var, Var),
    Scale(Var, F),
    MulConst(Var, Vec<F>),
    AddConst(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<F>,
        rstd: Vec<F>,
    },
    Reshape(Var),
    FrameWindows {
        x: Var,
        frames: Vec<usize>,
        kernel: usize,
    },
    RowScale(Var, Var),
    GatherRows(Var, Vec<usize>),
    ScatterRows(Var, Vec<usize>),
    SelectEntries(Var, Vec<(usize, usize)>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Sum(Var),
    Mean(Var),
}

struct Node<'a, F: Real> {
    value: Cow<'a, [F]>,
    shape: Vec<usize>,
    op: Op<F>,
    needs_grad: bool,
}

/// Recording arena for one forward pass. Confined to a single thread.
pub struct Graph<'a, F: Real> {
    nodes: Vec<Node<'a, F>>,
}

impl<'a, F: Real> Default for Graph<'a, F> {
    fn default() -> Self {
        Self::new()
    }
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        1 => (1, shape[0]),
        _ => (shape[..shape.len() - 1].iter().product(), shape[shape.len() - 1]),
    }
}

impl<'a, F: Real> Graph<'a, F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<F>, shape: Vec<usize>, op: Op<F>) -> Var {
        let needs_grad = self.op_needs_grad(&op);
        let op = if needs_grad { op } else { strip(op) };
        self.nodes.push(Node {
            value: Cow::Owned(value),
            shape,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn op_needs_grad(&self, op: &Op<F>) -> bool {
        let g = |v: &Var| self.nodes[v.0].needs_grad;
        match op {
            Op::Leaf => false,
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::AddBias(a, b)
            | Op::RowScale(a, b) => g(a) || g(b),
            Op::LayerNorm { x, gain, bias, .. } => g(x) || g(gain) || g(bias),
            Op::ConcatCols(xs) => xs.iter().any(g),
            Op::Transpose(x)
            | Op::Scale(x, _)
            | Op::MulConst(x, _)
            | Op::AddConst(x)
            | Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Tanh(x)
            | Op::Softmax(x)
            | Op::Reshape(x)
            | Op::FrameWindows { x, .. }
            | Op::GatherRows(x, _)
            | Op::ScatterRows(x, _)
            | Op::SelectEntries(x, _)
            | Op::SliceCols(x, _)
            | Op::Sum(x)
            | Op::Mean(x) => g(x),
        }
    }

    /// Trainable leaf borrowed from a parameter store.
    pub fn param(&mut self, t: &'a Tensor<F>) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(t.data()),
            shape: t.shape().to_vec(),
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf borrowed from `t` but viewed with a different shape of equal size
    /// (e.g. a `K×Cin×Cout` kernel as `(K·Cin)×Cout`).
    pub fn leaf_view(&mut self, t: &'a Tensor<F>, shape: Vec<usize>, trainable: bool) -> Result<Var> {
        if shape.iter().product::<usize>() != t.numel() {
            return Err(S2aError::shape("leaf_view", t.shape(), &shape));
        }
        self.nodes.push(Node {
            value: Cow::Borrowed(t.data()),
            shape,
            op: Op::Leaf,
            needs_grad: trainable,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Non-trainable leaf borrowed from caller-owned data.
    pub fn constant_ref(&mut self, t: &'a Tensor<F>) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(t.data()),
            shape: t.shape().to_vec(),
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Owned leaf; `requires_grad` decides whether backward reports its gradient.
    pub fn input(&mut self, t: Tensor<F>) -> Var {
        let needs_grad = t.requires_grad;
        let shape = t.shape().to_vec();
        self.nodes.push(Node {
            value: Cow::Owned(t.into_data()),
            shape,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[F] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor<F> {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("consistent node")
    }

    pub fn scalar(&self, v: Var) -> F {
        self.value(v)[0]
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(S2aError::shape(op, s, &[0, 0]));
        }
        Ok((s[0], s[1]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(S2aError::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(S2aError::shape("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![F::zero(); m * n];
        F::gemm(m, k, n, self.value(a), false, self.value(b), false, F::zero(), &mut out);
        Ok(self.push(out, vec![m, n], Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims2("transpose", x)?;
        let xv = self.value(x);
        let mut out = vec![F::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xv[i * c + j];
            }
        }
        Ok(self.push(out, vec![c, r], Op::Transpose(x)))
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(F, F) -> F) -> Result<Vec<F>> {
        self.same_shape(op, a, b)?;
        Ok(self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("add", a, b, |x, y| x + y)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(out, shape, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("sub", a, b, |x, y| x - y)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(out, shape, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("mul", a, b, |x, y| x * y)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(out, shape, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("div", a, b, |x, y| x / y)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(out, shape, Op::Div(a, b)))
    }

    /// `x + b` with `b` broadcast over rows (`b` has `cols(x)` elements).
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (_, c) = rows_cols(self.shape(x));
        if self.value(b).len() != c {
            return Err(S2aError::shape("add_bias", self.shape(x), self.shape(b)));
        }
        let bv = self.value(b);
        let out: Vec<F> = self
            .value(x)
            .chunks(c)
            .flat_map(|row| row.iter().zip(bv).map(|(&v, &bb)| v + bb))
            .collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(out, shape, Op::AddBias(x, b)))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    pub fn scale(&mut self, x: Var, c: F) -> Result<Var> {
        let out = self.value(x).iter().map(|&v| v * c).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(out, shape, Op::Scale(x, c)))
    }

    /// Elementwise product with a constant (dropout masks, frame masks).
    pub fn mul_const(&mut self, x: Var, m: Vec<F>) -> Result<Var> {
        if m.len() != self.value(x).len() {
            return Err(S2aError::shape("mul_const", self.shape(x), &[m.len()]));
        }
        let out = self.value(x).iter().zip(&m).map(|(&v, &s)| v * s).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(out, shape, Op::MulConst(x, m)))
    }

    /// Adds a constant; used for `-inf` score masks. Gradient passes through.
    pub fn add_const(&mut self, x: Var, c: &[F]) -> Result<Var> {
        if c.len() != self.value(x).len() {
            return Err(S2aError::shape("add_const", self.shape(x), &[c.len()]));
        }
        let out = self.value(x).iter().zip(c).map(|(&v, &s)| v + s).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(out, shape, Op::AddConst(x)))
    }

    fn unary(&mut self, x: Var, f: impl Fn(F) -> F, op: Op<F>) -> Var {
        let out = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(out, shape, op)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > F::zero() { v } else { F::zero() }, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, |v| F::one() / (F::one() + (-v).exp()), Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), Op::Tanh(x))
    }

    /// Row-wise softmax over the last dimension. `-inf` entries map to exactly 0.
    pub fn softmax_lastdim(&mut self, x: Var) -> Result<Var> {
        let (_, c) = rows_cols(self.shape(x));
        let mut out = self.value(x).to_vec();
        softmax_rows_in_place(&mut out, c)?;
        let shape = self.shape(x).to_vec();
        Ok(self.push(out, shape, Op::Softmax(x)))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: F) -> Result<Var> {
        let (r, c) = rows_cols(self.shape(x));
        if self.value(gain).len() != c || self.value(bias).len() != c {
            return Err(S2aError::shape("layer_norm", self.shape(x), self.shape(gain)));
        }
        if !(eps > F::zero()) {
            return Err(S2aError::Config("layer_norm eps must be positive".into()));
        }
        let cf = F::from_usize(c).unwrap();
        let xv = self.value(x);
        let (gv, bv) = (self.value(gain), self.value(bias));
        let mut xhat = vec![F::zero(); r * c];
        let mut rstd = vec![F::zero(); r];
        let mut out = vec![F::zero(); r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().copied().sum::<F>() / cf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / cf;
            let rs = F::one() / (var + eps).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[i * c + j] = h;
                out[i * c + j] = h * gv[j] + bv[j];
            }
        }
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            out,
            shape,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(S2aError::shape("reshape", self.shape(x), &shape));
        }
        let out = self.value(x).to_vec();
        Ok(self.push(out, shape, Op::Reshape(x)))
    }

    /// Gathers zero-padded temporal windows: row `r` holds frames
    /// `frames[r] - (K-1)/2 ..= frames[r] + (K-1)/2` of `x: T×C`, flattened as
    /// `[k*C + c]`. `frames = None` takes every frame.
    pub fn frame_windows(&mut self, x: Var, frames: Option<Vec<usize>>, kernel: usize) -> Result<Var> {
        if kernel % 2 == 0 {
            return Err(S2aError::Config(format!("kernel size must be odd, got {kernel}")));
        }
        let (t, c) = self.dims2("frame_windows", x)?;
        let frames = frames.unwrap_or_else(|| (0..t).collect());
        if let Some(&bad) = frames.iter().find(|&&f| f >= t) {
            return Err(S2aError::InvalidInput(format!("frame {bad} out of range for length {t}")));
        }
        let half = (kernel - 1) / 2;
        let width = kernel * c;
        let xv = self.value(x);
        let mut out = vec![F::zero(); frames.len() * width];
        for (r, &f) in frames.iter().enumerate() {
            for k in 0..kernel {
                let src = f as isize + k as isize - half as isize;
                if src < 0 || src >= t as isize {
                    continue;
                }
                let src = src as usize;
                out[r * width + k * c..r * width + (k + 1) * c].copy_from_slice(&xv[src * c..(src + 1) * c]);
            }
        }
        let rows = frames.len();
        Ok(self.push(out, vec![rows, width], Op::FrameWindows { x, frames, kernel }))
    }

    /// Stride-1 "same" convolution over time: `x: T×Cin`, `w: K×Cin×Cout`, `b: Cout`.
    pub fn conv1d_same(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let ws = self.shape(w).to_vec();
        if ws.len() != 3 {
            return Err(S2aError::shape("conv1d_same", self.shape(x), &ws));
        }
        let (_, cin) = self.dims2("conv1d_same", x)?;
        if ws[1] != cin {
            return Err(S2aError::shape("conv1d_same", self.shape(x), &ws));
        }
        let win = self.frame_windows(x, None, ws[0])?;
        let wf = self.reshape(w, vec![ws[0] * ws[1], ws[2]])?;
        self.linear(win, wf, b)
    }

    /// Scales row `r` of `x: R×C` by `s[r]` (`s` has R elements).
    pub fn row_scale(&mut self, x: Var, s: Var) -> Result<Var> {
        let (r, c) = rows_cols(self.shape(x));
        if self.value(s).len() != r {
            return Err(S2aError::shape("row_scale", self.shape(x), self.shape(s)));
        }
        let sv = self.value(s);
        let out = self
            .value(x)
            .chunks(c.max(1))
            .zip(sv)
            .flat_map(|(row, &k)| row.iter().map(move |&v| v * k))
            .collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(out, shape, Op::RowScale(x, s)))
    }

    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        let (r, c) = self.dims2("gather_rows", x)?;
        if idx.iter().any(|&i| i >= r) {
            return Err(S2aError::InvalidInput("gather_rows index out of range".into()));
        }
        let xv = self.value(x);
        let out = idx.iter().flat_map(|&i| xv[i * c..(i + 1) * c].iter().copied()).collect();
        let n = idx.len();
        Ok(self.push(out, vec![n, c], Op::GatherRows(x, idx)))
    }

    /// Scatter-adds the rows of `x: R×C` into a zero `total×C` matrix at `idx`.
    pub fn scatter_rows(&mut self, x: Var, idx: Vec<usize>, total: usize) -> Result<Var> {
        let (r, c) = self.dims2("scatter_rows", x)?;
        if idx.len() != r || idx.iter().any(|&i| i >= total) {
            return Err(S2aError::InvalidInput("scatter_rows index out of range".into()));
        }
        let xv = self.value(x);
        let mut out = vec![F::zero(); total * c];
        for (row, &i) in idx.iter().enumerate() {
            for j in 0..c {
                out[i * c + j] += xv[row * c + j];
            }
        }
        Ok(self.push(out, vec![total, c], Op::ScatterRows(x, idx)))
    }

    /// Picks `x[r, c]` for each `(r, c)` into an `N×1` column.
    pub fn select_entries(&mut self, x: Var, entries: Vec<(usize, usize)>) -> Result<Var> {
        let (r, c) = self.dims2("select_entries", x)?;
        if entries.iter().any(|&(i, j)| i >= r || j >= c) {
            return Err(S2aError::InvalidInput("select_entries index out of range".into()));
        }
        let xv = self.value(x);
        let out = entries.iter().map(|&(i, j)| xv[i * c + j]).collect();
        let n = entries.len();
        Ok(self.push(out, vec![n, 1], Op::SelectEntries(x, entries)))
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| S2aError::InvalidInput("concat of nothing".into()))?;
        let (t, _) = self.dims2("concat_cols", first)?;
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let (tx, c) = self.dims2("concat_cols", x)?;
            if tx != t {
                return Err(S2aError::shape("concat_cols", self.shape(first), self.shape(x)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![F::zero(); t * total];
        let mut off = 0;
        for (&x, &c) in xs.iter().zip(&widths) {
            let xv = self.value(x);
            for i in 0..t {
                out[i * total + off..i * total + off + c].copy_from_slice(&xv[i * c..(i + 1) * c]);
            }
            off += c;
        }
        Ok(self.push(out, vec![t, total], Op::ConcatCols(xs.to_vec())))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (t, c) = self.dims2("slice_cols", x)?;
        if start + len > c {
            return Err(S2aError::shape("slice_cols", self.shape(x), &[start, len]));
        }
        let xv = self.value(x);
        let out = (0..t)
            .flat_map(|i| xv[i * c + start..i * c + start + len].iter().copied())
            .collect();
        Ok(self.push(out, vec![t, len], Op::SliceCols(x, start)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().copied().sum();
        self.push(vec![s], vec![1], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.iter().copied().sum::<F>() / F::from_usize(v.len().max(1)).unwrap();
        self.push(vec![s], vec![1], Op::Mean(x))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Grads<F>> {
        if self.value(loss).len() != 1 {
            return Err(S2aError::InvalidInput(format!(
                "backward needs a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<F>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        Ok(Grads { grads })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<F>>], v: Var) -> Option<&'g mut Vec<F>> {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![F::zero(); node.value.len()]))
    }

    fn backprop_node(&self, node: &Node<'a, F>, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let out = &node.value[..];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = rows_cols(self.shape(*a));
                let n = self.shape(*b)[1];
                let bv = self.value(*b);
                if let Some(da) = self.acc(grads, *a) {
                    F::gemm(m, n, k, g, false, bv, true, F::one(), da);
                }
                let av = self.value(*a);
                if let Some(db) = self.acc(grads, *b) {
                    F::gemm(k, m, n, av, true, g, false, F::one(), db);
                }
            }
            Op::Transpose(x) => {
                let (r, c) = rows_cols(self.shape(*x));
                if let Some(dx) = self.acc(grads, *x) {
                    for i in 0..r {
                        for j in 0..c {
                            dx[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(da) = self.acc(grads, *a) {
                    axpy(da, g, F::one());
                }
                if let Some(db) = self.acc(grads, *b) {
                    axpy(db, g, F::one());
                }
            }
            Op::Sub(a, b) => {
                if let Some(da) = self.acc(grads, *a) {
                    axpy(da, g, F::one());
                }
                if let Some(db) = self.acc(grads, *b) {
                    axpy(db, g, -F::one());
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(da) = self.acc(grads, *a) {
                    for ((d, &gi), &y) in da.iter_mut().zip(g).zip(bv) {
                        *d += gi * y;
                    }
                }
                if let Some(db) = self.acc(grads, *b) {
                    for ((d, &gi), &x) in db.iter_mut().zip(g).zip(av) {
                        *d += gi * x;
                    }
                }
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(da) = self.acc(grads, *a) {
                    for ((d, &gi), &y) in da.iter_mut().zip(g).zip(bv) {
                        *d += gi / y;
                    }
                }
                if let Some(db) = self.acc(grads, *b) {
                    for (((d, &gi), &x), &y) in db.iter_mut().zip(g).zip(av).zip(bv) {
                        *d -= gi * x / (y * y);
                    }
                }
            }
            Op::AddBias(x, b) => {
                let c = self.value(*b).len();
                if let Some(dx) = self.acc(grads, *x) {
                    axpy(dx, g, F::one());
                }
                if let Some(db) = self.acc(grads, *b) {
                    for row in g.chunks(c) {
                        axpy(db, row, F::one());
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(dx) = self.acc(grads, *x) {
                    axpy(dx, g, *c);
                }
            }
            Op::MulConst(x, m) => {
                if let Some(dx) = self.acc(grads, *x) {
                    for ((d, &gi), &s) in dx.iter_mut().zip(g).zip(m) {
                        *d += gi * s;
                    }
                }
            }
            Op::AddConst(x) | Op::Reshape(x) => {
                if let Some(dx) = self.acc(grads, *x) {
                    axpy(dx, g, F::one());
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                if let Some(dx) = self.acc(grads, *x) {
                    for ((d, &gi), &v) in dx.iter_mut().zip(g).zip(xv) {
                        if v > F::zero() {
                            *d += gi;
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(dx) = self.acc(grads, *x) {
                    for ((d, &gi), &y) in dx.iter_mut().zip(g).zip(out) {
                        *d += gi * y * (F::one() - y);
                    }
                }
            }
            Op::Tanh(x) => {
                if let Some(dx) = self.acc(grads, *x) {
                    for ((d, &gi), &y) in dx.iter_mut().zip(g).zip(out) {
                        *d += gi * (F::one() - y * y);
                    }
                }
            }
            Op::Softmax(x) => {
                let (_, c) = rows_cols(&node.shape);
                if let Some(dx) = self.acc(grads, *x) {
                    for ((drow, grow), yrow) in dx.chunks_mut(c).zip(g.chunks(c)).zip(out.chunks(c)) {
                        let dot: F = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                        for ((d, &gi), &y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += y * (gi - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let (_, c) = rows_cols(&node.shape);
                let gv = self.value(*gain);
                if let Some(dg) = self.acc(grads, *gain) {
                    for (grow, hrow) in g.chunks(c).zip(xhat.chunks(c)) {
                        for ((d, &gi), &h) in dg.iter_mut().zip(grow).zip(hrow) {
                            *d += gi * h;
                        }
                    }
                }
                if let Some(db) = self.acc(grads, *bias) {
                    for grow in g.chunks(c) {
                        axpy(db, grow, F::one());
                    }
                }
                if let Some(dx) = self.acc(grads, *x) {
                    let cf = F::from_usize(c).unwrap();
                    let mut dh = vec![F::zero(); c];
                    for (i, ((drow, grow), hrow)) in
                        dx.chunks_mut(c).zip(g.chunks(c)).zip(xhat.chunks(c)).enumerate()
                    {
                        for j in 0..c {
                            dh[j] = grow[j] * gv[j];
                        }
                        let mean_dh = dh.iter().copied().sum::<F>() / cf;
                        let mean_dhh = dh.iter().zip(hrow).map(|(&a, &b)| a * b).sum::<F>() / cf;
                        for j in 0..c {
                            drow[j] += rstd[i] * (dh[j] - mean_dh - hrow[j] * mean_dhh);
                        }
                    }
                }
            }
            Op::FrameWindows { x, frames, kernel } => {
                let (t, c) = rows_cols(self.shape(*x));
                let half = (kernel - 1) / 2;
                let width = kernel * c;
                if let Some(dx) = self.acc(grads, *x) {
                    for (r, &f) in frames.iter().enumerate() {
                        for k in 0..*kernel {
                            let src = f as isize + k as isize - half as isize;
                            if src < 0 || src >= t as isize {
                                continue;
                            }
                            let src = src as usize;
                            axpy(
                                &mut dx[src * c..(src + 1) * c],
                                &g[r * width + k * c..r * width + (k + 1) * c],
                                F::one(),
                            );
                        }
                    }
                }
            }
            Op::RowScale(x, s) => {
                let (_, c) = rows_cols(&node.shape);
                let (xv, sv) = (self.value(*x), self.value(*s));
                if let Some(dx) = self.acc(grads, *x) {
                    for ((drow, grow), &k) in dx.chunks_mut(c).zip(g.chunks(c)).zip(sv) {
                        axpy(drow, grow, k);
                    }
                }
                if let Some(ds) = self.acc(grads, *s) {
                    for ((d, grow), xrow) in ds.iter_mut().zip(g.chunks(c)).zip(xv.chunks(c)) {
                        *d += grow.iter().zip(xrow).map(|(&a, &b)| a * b).sum::<F>();
                    }
                }
            }
            Op::GatherRows(x, idx) => {
                let c = node.shape[1];
                if let Some(dx) = self.acc(grads, *x) {
                    for (r, &i) in idx.iter().enumerate() {
                        axpy(&mut dx[i * c..(i + 1) * c], &g[r * c..(r + 1) * c], F::one());
                    }
                }
            }
            Op::ScatterRows(x, idx) => {
                let c = node.shape[1];
                if let Some(dx) = self.acc(grads, *x) {
                    for (r, &i) in idx.iter().enumerate() {
                        axpy(&mut dx[r * c..(r + 1) * c], &g[i * c..(i + 1) * c], F::one());
                    }
                }
            }
            Op::SelectEntries(x, entries) => {
                let c = self.shape(*x)[1];
                if let Some(dx) = self.acc(grads, *x) {
                    for (&(i, j), &gi) in entries.iter().zip(g) {
                        dx[i * c + j] += gi;
                    }
                }
            }
            Op::ConcatCols(xs) => {
                let (t, total) = (node.shape[0], node.shape[1]);
                let mut off = 0;
                for &x in xs {
                    let c = self.shape(x)[1];
                    if let Some(dx) = self.acc(grads, x) {
                        for i in 0..t {
                            axpy(
                                &mut dx[i * c..(i + 1) * c],
                                &g[i * total + off..i * total + off + c],
                                F::one(),
                            );
                        }
                    }
                    off += c;
                }
            }
            Op::SliceCols(x, start) => {
                let (t, len) = (node.shape[0], node.shape[1]);
                let c = self.shape(*x)[1];
                if let Some(dx) = self.acc(grads, *x) {
                    for i in 0..t {
                        axpy(
                            &mut dx[i * c + start..i * c + start + len],
                            &g[i * len..(i + 1) * len],
                            F::one(),
                        );
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(dx) = self.acc(grads, *x) {
                    dx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(x) => {
                let n = F::from_usize(self.value(*x).len().max(1)).unwrap();
                if let Some(dx) = self.acc(grads, *x) {
                    dx.iter_mut().for_each(|d| *d += g[0] / n);
                }
            }
        }
    }
}

// Drops saved backward state from ops whose inputs need no gradient.
fn strip<F>(op: Op<F>) -> Op<F> {
    match op {
        Op::LayerNorm { x, gain, bias, .. } => Op::LayerNorm {
            x,
            gain,
            bias,
            xhat: Vec::new(),
            rstd: Vec::new(),
        },
        Op::MulConst(x, _) => Op::MulConst(x, Vec::new()),
        other => other,
    }
}

fn axpy<F: Real>(dst: &mut [F], src: &[F], alpha: F) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

/// Numerically stable row softmax; `-inf` entries become exactly 0.
pub(crate) fn softmax_rows_in_place<F: Real>(data: &mut [F], cols: usize) -> Result<()> {
    for row in data.chunks_mut(cols.max(1)) {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        if max == F::neg_infinity() {
            return Err(S2aError::InvalidInput("softmax row has no finite entry".into()));
        }
        let mut total = F::zero();
        for v in row.iter_mut() {
            *v = if *v == F::neg_infinity() { F::zero() } else { (*v - max).exp() };
            total += *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    Ok(())
}

/// Gradients from one backward sweep, indexed by [`Var`].
pub struct Grads<F> {
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Real> Grads<F> {
    pub fn get(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<F>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

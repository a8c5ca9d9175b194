use std::collections::HashMap;

use crate::error::{Result, S2aError};
use crate::numerics::{Graph, Real, RngState, Tensor, Var};

/// Named parameter tensors in canonical (insertion) order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<F: Real = f32> {
    entries: Vec<(String, Tensor<F>)>,
    index: HashMap<String, usize>,
}

impl<F: Real> Default for Params<F> {
    fn default() -> Self {
        Params {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }
}

impl<F: Real> Params<F> {
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<F>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(S2aError::InvalidInput(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, t));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<F>> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i].1)
            .ok_or_else(|| S2aError::InvalidInput(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<F>> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.entries[i].1),
            None => Err(S2aError::InvalidInput(format!("missing parameter {name}"))),
        }
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<F>> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count.
    pub fn num_elements(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn cast<G: Real>(&self) -> Params<G> {
        Params {
            entries: self.entries.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
            index: self.index.clone(),
        }
    }

    pub fn into_tensors(self) -> Vec<(String, Tensor<F>)> {
        self.entries
    }

    /// Registers every parameter on `g`. Rank-3 convolution kernels are viewed
    /// as `(K·Cin)×Cout` matrices.
    pub fn bind<'a>(&'a self, g: &mut Graph<'a, F>, trainable: bool) -> Result<Bound<'a, F>> {
        let mut vars = Vec::with_capacity(self.entries.len());
        for (_, t) in &self.entries {
            let shape = match t.shape() {
                [k, cin, cout] => vec![k * cin, *cout],
                s => s.to_vec(),
            };
            vars.push(g.leaf_view(t, shape, trainable)?);
        }
        Ok(Bound { params: self, vars })
    }

    /// Like [`Params::bind`] but substitutes caller-provided vars (used by
    /// gradient checks that perturb parameters).
    pub fn bind_vars<'a>(&'a self, vars: Vec<Var>) -> Result<Bound<'a, F>> {
        if vars.len() != self.entries.len() {
            return Err(S2aError::InvalidInput("parameter/var count mismatch".into()));
        }
        Ok(Bound { params: self, vars })
    }
}

/// Parameters registered on one graph.
pub struct Bound<'a, F: Real> {
    params: &'a Params<F>,
    vars: Vec<Var>,
}

impl<'a, F: Real> Bound<'a, F> {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.params
            .position(name)
            .map(|i| self.vars[i])
            .ok_or_else(|| S2aError::InvalidInput(format!("missing parameter {name}")))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn params(&self) -> &'a Params<F> {
        self.params
    }
}

/// Glorot-normal weight of the given shape; `fan_in`/`fan_out` given explicitly
/// so convolution kernels can count their receptive field.
pub(crate) fn glorot<F: Real>(rng: &mut RngState, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor<F> {
    let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| F::lit(rng.normal() * std))
}

pub(crate) fn zeros<F: Real>(shape: &[usize]) -> Tensor<F> {
    Tensor::zeros(shape)
}

pub(crate) fn ones<F: Real>(shape: &[usize]) -> Tensor<F> {
    Tensor::filled(shape, F::one())
}

//! Named parameter storage and per-pass binding to autodiff leaves.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, Var};

/// Owned, thread-safe parameter values keyed by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, DenseTensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: DenseTensor) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&DenseTensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut DenseTensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Names in sorted order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DenseTensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut DenseTensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(DenseTensor::len).sum()
    }

    /// Wrap every parameter in a fresh trainable leaf.
    pub fn bind(&self) -> Bound {
        self.bind_with(Var::leaf)
    }

    /// Wrap every parameter as a constant (inference).
    pub fn bind_const(&self) -> Bound {
        self.bind_with(Var::constant)
    }

    fn bind_with(&self, f: impl Fn(DenseTensor) -> Var) -> Bound {
        Bound {
            vars: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), f(v.clone())))
                .collect(),
        }
    }

    pub(crate) fn uniform(
        &mut self,
        name: String,
        shape: &[usize],
        bound: f64,
        rng: &mut impl Rng,
    ) -> Result<()> {
        self.insert(name, DenseTensor::uniform(shape, -bound, bound, rng)?);
        Ok(())
    }

    /// Weight matrix `[fan_in, fan_out]` with uniform `±1/sqrt(fan_in)` entries.
    pub(crate) fn linear(
        &mut self,
        name: String,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Result<()> {
        self.uniform(name, &[fan_in, fan_out], 1.0 / (fan_in as f64).sqrt(), rng)
    }

    pub(crate) fn fill(&mut self, name: String, shape: &[usize], value: f64) -> Result<()> {
        self.insert(name, DenseTensor::full(shape, value)?);
        Ok(())
    }
}

/// Parameters bound to [`Var`]s for one forward/backward pass.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self {
            vars: vars.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<&Var> {
        self.vars
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Gradients after backward, zero-filled for parameters never reached.
    pub fn grads(&self) -> Result<BTreeMap<String, DenseTensor>> {
        self.vars
            .iter()
            .map(|(k, v)| {
                let g = match v.grad() {
                    Some(g) => g,
                    None => DenseTensor::zeros(v.shape())?,
                };
                Ok((k.clone(), g))
            })
            .collect()
    }
}

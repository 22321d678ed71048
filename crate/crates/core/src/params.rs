//! Named parameter collections.

use std::collections::BTreeMap;

use rand::Rng;

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Parameters keyed by dotted names (`decoder.film.gamma.weight`), iterated
/// in name order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T: Scalar = f32> {
    entries: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        self.entries.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::config(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    /// Adds `other` entrywise; both sets must have the same names and shapes.
    pub fn accumulate(&mut self, other: &Self) -> Result<()> {
        for (name, value) in &mut self.entries {
            let o = other.get(name)?;
            o.expect_shape(value.shape())?;
            value.add_assign(o);
        }
        Ok(())
    }

    pub fn scale_all(&mut self, factor: T) {
        for value in self.entries.values_mut() {
            for v in value.data_mut() {
                *v = *v * factor;
            }
        }
    }

    /// Name of the first entry holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<(&str, usize)> {
        self.entries
            .iter()
            .find_map(|(k, v)| v.first_non_finite().map(|i| (k.as_str(), i)))
    }

    /// Records every entry on `tape` as a differentiable leaf.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> Bound<'t, T> {
        Bound {
            vars: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), tape.param(v.clone())))
                .collect(),
        }
    }

    /// Records every entry on `tape` as a constant.
    pub fn bind_frozen<'t>(&self, tape: &'t Tape<T>) -> Bound<'t, T> {
        Bound {
            vars: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), tape.constant(v.clone())))
                .collect(),
        }
    }

    /// Gaussian weight `[fan_in, fan_out]` and zero bias under `prefix`.
    pub fn init_linear<R: Rng + ?Sized>(&mut self, prefix: &str, fan_in: usize, fan_out: usize, std: f64, rng: &mut R) {
        self.insert(format!("{prefix}.weight"), Tensor::randn(&[fan_in, fan_out], std, rng));
        self.insert(format!("{prefix}.bias"), Tensor::zeros(&[fan_out]));
    }

    pub fn init_layer_norm(&mut self, prefix: &str, dim: usize) {
        self.insert(format!("{prefix}.scale"), Tensor::full(&[dim], T::one()));
        self.insert(format!("{prefix}.shift"), Tensor::zeros(&[dim]));
    }

    /// Moves every entry of `other` in under `prefix.`.
    pub fn extend_prefixed(&mut self, prefix: &str, other: ParamSet<T>) {
        for (k, v) in other.entries {
            self.entries.insert(format!("{prefix}.{k}"), v);
        }
    }

    /// Entries under `prefix.`, with the prefix stripped.
    pub fn sub(&self, prefix: &str) -> Self {
        let p = format!("{prefix}.");
        Self {
            entries: self
                .entries
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(&p).map(|s| (s.to_string(), v.clone())))
                .collect(),
        }
    }
}

/// Parameters recorded on a tape.
pub struct Bound<'t, T: Scalar> {
    vars: BTreeMap<String, Var<'t, T>>,
}

impl<'t, T: Scalar> Bound<'t, T> {
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var<'t, T>)>) -> Self {
        Self { vars: vars.into_iter().collect() }
    }

    /// Entries under `prefix.`, with the prefix stripped. The returned vars
    /// are the same tape nodes.
    pub fn scope(&self, prefix: &str) -> Self {
        let p = format!("{prefix}.");
        Self {
            vars: self
                .vars
                .iter()
                .filter_map(|(k, &v)| k.strip_prefix(&p).map(|s| (s.to_string(), v)))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var<'t, T>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::config(format!("missing parameter `{name}`")))
    }

    /// Gradients for every bound parameter; unreached ones are zero.
    pub fn gradients(&self, grads: &Gradients<T>) -> ParamSet<T> {
        ParamSet {
            entries: self
                .vars
                .iter()
                .map(|(k, &v)| (k.clone(), grads.get_or_zeros(v)))
                .collect(),
        }
    }
}

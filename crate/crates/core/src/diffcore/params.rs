use std::collections::BTreeMap;

use rand::Rng;

use super::RealArray;
use crate::error::{Error, Result};

/// A named parameter value with its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: RealArray,
    pub grad: RealArray,
}

/// Flat, name-ordered collection of model parameters.
///
/// Iteration order is the lexicographic order of names, which fixes the
/// order of every reduction over parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: RealArray) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::DuplicateName(name));
        }
        let grad = RealArray::zeros(value.shape());
        self.entries.insert(name, Param { value, grad });
        Ok(())
    }

    /// Inserts or overwrites a parameter, resetting its gradient.
    pub fn set(&mut self, name: impl Into<String>, value: RealArray) {
        let grad = RealArray::zeros(value.shape());
        self.entries.insert(name.into(), Param { value, grad });
    }

    /// Glorot-uniform weight matrix `[fan_out, fan_in]`.
    pub fn init_weight<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        fan_out: usize,
        fan_in: usize,
        rng: &mut R,
    ) -> Result<()> {
        let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_out * fan_in).map(|_| rng.random_range(-s..s)).collect();
        self.insert(name, RealArray::matrix(fan_out, fan_in, data)?)
    }

    pub fn init_zeros(&mut self, name: &str, shape: &[usize]) -> Result<()> {
        self.insert(name, RealArray::zeros(shape))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.entries.get(name).ok_or_else(|| Error::Unbound(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::Unbound(name.to_string()))
    }

    pub fn value(&self, name: &str) -> Result<&RealArray> {
        Ok(&self.get(name)?.value)
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut RealArray> {
        Ok(&mut self.get_mut(name)?.value)
    }

    pub fn grad(&self, name: &str) -> Result<&RealArray> {
        Ok(&self.get(name)?.grad)
    }

    pub fn remove(&mut self, name: &str) -> Option<Param> {
        self.entries.remove(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn zero_grad(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Adds `scale · g` into the gradient slots of matching parameters.
    pub fn accumulate(&mut self, grads: &Gradients, scale: f64) -> Result<()> {
        for (name, g) in grads.iter() {
            let p = self.get_mut(name)?;
            if p.grad.shape() != g.shape() {
                return Err(Error::shape("accumulate", name));
            }
            for (a, b) in p.grad.data_mut().iter_mut().zip(g.data()) {
                *a += scale * b;
            }
        }
        Ok(())
    }

    /// Copy of the current gradient slots.
    pub fn gradients(&self) -> Gradients {
        let mut out = Gradients::default();
        for (name, p) in &self.entries {
            out.insert(name.clone(), p.grad.clone());
        }
        out
    }

    /// Parameters whose names start with `prefix`.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a Param)> {
        self.iter().filter(move |(n, _)| n.starts_with(prefix))
    }

    /// Copies every parameter of `other` into `self`, overwriting.
    pub fn merge(&mut self, other: &ParamStore) {
        for (name, p) in other.iter() {
            self.entries.insert(name.to_string(), p.clone());
        }
    }
}

/// Name-keyed gradient arrays, as returned by a backward pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    entries: BTreeMap<String, RealArray>,
}

impl Gradients {
    pub fn insert(&mut self, name: String, g: RealArray) {
        self.entries.insert(name, g);
    }

    pub fn get(&self, name: &str) -> Option<&RealArray> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &RealArray)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Adds `scale · other`, creating missing entries.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (name, g) in other.iter() {
            match self.entries.get_mut(name) {
                Some(mine) => {
                    for (a, b) in mine.data_mut().iter_mut().zip(g.data()) {
                        *a += scale * b;
                    }
                }
                None => {
                    let mut g = g.clone();
                    g.data_mut().iter_mut().for_each(|v| *v *= scale);
                    self.entries.insert(name.to_string(), g);
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.entries.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.values().fold(0.0, |m, g| m.max(g.max_abs()))
    }

    pub fn l2_norm(&self) -> f64 {
        self.entries
            .values()
            .flat_map(|g| g.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// `self − other` over the union of names.
    pub fn sub(&self, other: &Gradients) -> Gradients {
        let mut out = self.clone();
        out.add_scaled(other, -1.0);
        out
    }

    pub fn retain(&mut self, mut keep: impl FnMut(&str) -> bool) {
        self.entries.retain(|k, _| keep(k));
    }
}

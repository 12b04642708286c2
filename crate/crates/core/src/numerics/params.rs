use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::RealMatrix;

/// Handle to one entry in a [`ParamStore`]; valid only for the store (or a
/// clone of it) that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

/// Gradient buffers aligned entry-for-entry with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    bufs: Vec<RealMatrix>,
}

impl Gradients {
    #[inline]
    pub fn get(&self, id: ParamId) -> &RealMatrix {
        &self.bufs[id.0]
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut RealMatrix {
        &mut self.bufs[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &RealMatrix> {
        self.bufs.iter()
    }

    pub fn len(&self) -> usize {
        self.bufs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bufs.is_empty()
    }

    pub fn zero(&mut self) {
        for b in &mut self.bufs {
            b.fill(0.0);
        }
    }

    /// Adds `other` entry by entry, in store order.
    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        if self.bufs.len() != other.bufs.len() {
            return Err(Error::Shape(format!(
                "gradient sets differ in entry count ({} vs {})",
                self.bufs.len(),
                other.bufs.len()
            )));
        }
        for (a, b) in self.bufs.iter_mut().zip(&other.bufs) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for b in &mut self.bufs {
            b.scale(factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.bufs
            .iter()
            .map(RealMatrix::sum_squares)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.bufs.iter().all(RealMatrix::is_finite)
    }
}

/// Named, insertion-ordered collection of trainable matrices with paired
/// gradient buffers.
///
/// Insertion order is the canonical parameter order: the optimizer, the
/// checkpoint writer and every gradient reduction walk entries in it.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<RealMatrix>,
    grads: Vec<RealMatrix>,
    lookup: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: RealMatrix) -> Result<ParamId> {
        let name = name.into();
        if self.lookup.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let id = self.values.len();
        self.lookup.insert(name.clone(), id);
        self.names.push(name);
        self.grads
            .push(RealMatrix::zeros(value.rows(), value.cols()));
        self.values.push(value);
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).copied().map(ParamId)
    }

    pub fn require(&self, name: &str) -> Result<ParamId> {
        self.id(name)
            .ok_or_else(|| Error::Config(format!("parameter `{name}` is missing")))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar weights.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(RealMatrix::len).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    #[inline]
    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    #[inline]
    pub fn value(&self, id: ParamId) -> &RealMatrix {
        &self.values[id.0]
    }

    #[inline]
    pub fn value_mut(&mut self, id: ParamId) -> &mut RealMatrix {
        &mut self.values[id.0]
    }

    #[inline]
    pub fn grad(&self, id: ParamId) -> &RealMatrix {
        &self.grads[id.0]
    }

    #[inline]
    pub fn grad_mut(&mut self, id: ParamId) -> &mut RealMatrix {
        &mut self.grads[id.0]
    }

    /// `(name, value, grad)` triples in canonical order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &RealMatrix, &RealMatrix)> {
        self.names
            .iter()
            .zip(&self.values)
            .zip(&self.grads)
            .map(|((n, v), g)| (n.as_str(), v, g))
    }

    /// A fresh all-zero gradient set shaped like this store.
    pub fn zeroed_gradients(&self) -> Gradients {
        Gradients {
            bufs: self
                .values
                .iter()
                .map(|v| RealMatrix::zeros(v.rows(), v.cols()))
                .collect(),
        }
    }

    /// A copy of the store's own gradient buffers.
    pub fn gradients(&self) -> Gradients {
        Gradients {
            bufs: self.grads.clone(),
        }
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    /// Adds `grads` into the store's gradient buffers.
    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        if grads.bufs.len() != self.grads.len() {
            return Err(Error::Shape(format!(
                "gradient set has {} entries, store has {}",
                grads.bufs.len(),
                self.grads.len()
            )));
        }
        for (a, b) in self.grads.iter_mut().zip(&grads.bufs) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    /// Replaces every value with the same-named value from `other`.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        for (i, name) in self.names.iter().enumerate() {
            let src = other
                .id(name)
                .ok_or_else(|| Error::Config(format!("parameter `{name}` is missing")))?;
            let src = other.value(src);
            if src.shape() != self.values[i].shape() {
                return Err(Error::Shape(format!(
                    "parameter `{name}`: expected {:?}, got {:?}",
                    self.values[i].shape(),
                    src.shape()
                )));
            }
            self.values[i] = src.clone();
        }
        Ok(())
    }

    pub fn values_finite(&self) -> bool {
        self.values.iter().all(RealMatrix::is_finite)
    }

    /// Per-entry Frobenius norms, for diagnostics.
    pub fn norms(&self) -> Vec<(String, f64)> {
        self.names
            .iter()
            .zip(&self.values)
            .map(|(n, v)| (n.clone(), v.sum_squares().sqrt()))
            .collect()
    }
}

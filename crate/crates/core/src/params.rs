//! Named parameter bundles: learnable weights plus non-learnable running buffers.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub dims: Vec<usize>,
    pub value: Vec<Real>,
    /// `false` for running statistics, which receive no gradient and no update.
    pub trainable: bool,
}

/// Initialization rule for a new bundle.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Constant(Real),
    /// Normal with standard deviation `gain / sqrt(fan_in)`.
    Normal { fan_in: usize, gain: Real },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, dims: Vec<usize>, value: Vec<Real>) -> Result<ParamId> {
        self.insert(name.into(), dims, value, true)
    }

    /// Register a non-learnable buffer (saved in checkpoints, skipped by optimizers
    /// and gradient checks).
    pub fn add_buffer(&mut self, name: impl Into<String>, dims: Vec<usize>, value: Vec<Real>) -> Result<ParamId> {
        self.insert(name.into(), dims, value, false)
    }

    fn insert(&mut self, name: String, dims: Vec<usize>, value: Vec<Real>, trainable: bool) -> Result<ParamId> {
        if self.by_name.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let len: usize = dims.iter().product();
        if len != value.len() || len == 0 {
            return Err(Error::Shape(format!(
                "parameter {name}: {} values for dims {dims:?}",
                value.len()
            )));
        }
        let id = self.params.len();
        self.by_name.insert(name.clone(), id);
        self.params.push(Param {
            name,
            dims,
            value,
            trainable,
        });
        Ok(ParamId(id))
    }

    pub fn add_init(&mut self, name: impl Into<String>, dims: Vec<usize>, init: Init, rng: &mut impl Rng) -> Result<ParamId> {
        let len: usize = dims.iter().product();
        let value = match init {
            Init::Zeros => vec![0.0; len],
            Init::Constant(c) => vec![c; len],
            Init::Normal { fan_in, gain } => {
                #[allow(clippy::unnecessary_cast)]
                let std = gain as f64 / (fan_in.max(1) as f64).sqrt();
                (0..len)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(rng);
                        (z * std) as Real
                    })
                    .collect()
            }
        };
        self.add(name, dims, value)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[Real] {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [Real] {
        &mut self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Total number of learnable scalars (buffers excluded).
    pub fn scalar_count(&self) -> u64 {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.len() as u64).sum()
    }

    /// Copy every bundle whose name and dims also exist in `other`; returns how many.
    pub fn copy_matching(&mut self, other: &ParamStore) -> usize {
        let mut copied = 0;
        for p in &mut self.params {
            if let Some(&j) = other.by_name.get(&p.name) {
                let q = &other.params[j];
                if q.dims == p.dims {
                    p.value.copy_from_slice(&q.value);
                    copied += 1;
                }
            }
        }
        copied
    }

    /// Zero-filled buffers shaped like every bundle.
    pub fn zeros_like(&self) -> Vec<Vec<Real>> {
        self.params.iter().map(|p| vec![0.0; p.value.len()]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_and_bad_lengths_rejected() {
        let mut s = ParamStore::new();
        s.add("a", vec![2, 3], vec![0.0; 6]).unwrap();
        assert!(s.add("a", vec![1], vec![0.0]).is_err());
        assert!(s.add("b", vec![2], vec![0.0; 3]).is_err());
        assert_eq!(s.scalar_count(), 6);
        assert_eq!(s.id("a"), Some(ParamId(0)));
    }
}

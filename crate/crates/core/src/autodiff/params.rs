use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::graph::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.names.iter().any(|n| *n == name) {
            return Err(Error::contract(format!("parameter {name:?} registered twice")));
        }
        if !value.all_finite() {
            return Err(Error::contract(format!("parameter {name:?} has non-finite entries")));
        }
        self.names.push(name);
        self.tensors.push(value.with_grad());
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    /// Replaces a parameter value, keeping its shape.
    pub fn assign(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let cur = &self.tensors[id.0];
        if cur.shape() != value.shape() {
            return Err(Error::shape(
                "assign",
                format!("{}: {:?} vs {:?}", self.names[id.0], cur.shape(), value.shape()),
            ));
        }
        self.tensors[id.0] = value.with_grad();
        Ok(())
    }

    pub fn total_values(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// `name=norm` pairs, used in numeric failure reports.
    pub fn norms_summary(&self) -> String {
        self.iter()
            .map(|(_, n, t)| format!("{n}={:.4e}", t.norm()))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

/// Gradient per parameter, keyed by id so iteration order is fixed.
#[derive(Clone, Debug, Default)]
pub struct GradientMap {
    grads: BTreeMap<ParamId, Tensor>,
}

impl GradientMap {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().map(|(k, v)| (*k, v))
    }

    /// Adds every entry of `other` into this map.
    pub fn merge(&mut self, other: &GradientMap) {
        for (id, t) in other.iter() {
            self.accumulate(id, t.shape(), t.data());
        }
    }

    /// Inserts zero gradients for parameters absent from the map.
    pub fn fill_missing(&mut self, store: &ParamStore) {
        for (id, _, t) in store.iter() {
            self.ensure(id, t.shape());
        }
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, shape: &[usize], grad: &[f64]) {
        let entry = self
            .grads
            .entry(id)
            .or_insert_with(|| Tensor::zeros(shape));
        for (a, g) in entry.data_mut().iter_mut().zip(grad) {
            *a += g;
        }
    }

    pub(crate) fn ensure(&mut self, id: ParamId, shape: &[usize]) {
        self.grads.entry(id).or_insert_with(|| Tensor::zeros(shape));
    }
}

/// Lazily binds parameters into one graph, at most once each.
pub struct Binding<'s> {
    store: &'s ParamStore,
    vars: Vec<Option<Var>>,
}

impl<'s> Binding<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Binding {
            store,
            vars: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn var(&mut self, g: &mut Graph, id: ParamId) -> Var {
        let store = self.store;
        *self.vars[id.0].get_or_insert_with(|| g.param(store, id))
    }
}

/// Deterministic parameter initialisation: every parameter draws from its own
/// stream keyed by `(seed, name)`, so models that share parameter names share
/// initial values regardless of which other parameters exist.
#[derive(Clone, Copy, Debug)]
pub struct Initializer {
    seed: u64,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer { seed }
    }

    pub fn rng_for(&self, name: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(stream_seed(self.seed, name))
    }

    pub fn normal(&self, name: &str, shape: &[usize], std: f64) -> Tensor {
        let mut rng = self.rng_for(name);
        let dist = Normal::new(0.0, std).expect("finite std");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(&mut rng)).collect();
        Tensor::new(shape.to_vec(), data).expect("consistent shape")
    }

    /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for a `fan_in x fan_out` weight.
    pub fn fan_in_uniform(&self, name: &str, fan_in: usize, fan_out: usize) -> Tensor {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut rng = self.rng_for(name);
        let dist = Uniform::new_inclusive(-bound, bound);
        let data = (0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect();
        Tensor::matrix(fan_in, fan_out, data).expect("consistent shape")
    }
}

/// FNV-1a over the name, mixed with the seed through splitmix64.
pub(crate) fn stream_seed(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(seed ^ h)
}

pub(crate) fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

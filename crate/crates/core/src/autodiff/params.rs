use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named parameters in canonical (sorted) order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

/// Gradients keyed by parameter name; absent names had no path to the loss.
pub type Grads = BTreeMap<String, Vec<f64>>;

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.tensors.remove(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Parameters whose name starts with `prefix`.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a String, &'a Tensor)> {
        self.tensors.iter().filter(move |(k, _)| k.starts_with(prefix))
    }

    /// Copy every `from*` parameter to `to*`, replacing the prefix.
    pub fn copy_prefix(&mut self, from: &str, to: &str) {
        let copies: Vec<(String, Tensor)> = self
            .with_prefix(from)
            .map(|(k, v)| (format!("{to}{}", &k[from.len()..]), v.clone()))
            .collect();
        for (k, v) in copies {
            self.tensors.insert(k, v);
        }
    }

    pub fn retain(&mut self, keep: impl Fn(&str) -> bool) {
        self.tensors.retain(|k, _| keep(k));
    }

    /// Euclidean distance over parameters sharing `prefix` in both stores.
    pub fn l2_distance(&self, other: &ParamStore, prefix: &str) -> f64 {
        self.with_prefix(prefix)
            .filter_map(|(k, a)| other.tensors.get(k).map(|b| (a, b)))
            .flat_map(|(a, b)| a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)))
            .sum::<f64>()
            .sqrt()
    }

    /// Gaussian init with standard deviation `std`.
    pub fn init_normal<R: Rng>(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut R) {
        let normal = Normal::new(0.0, std).expect("finite std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| normal.sample(rng)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data).expect("shape matches"));
    }

    pub fn init_const(&mut self, name: &str, shape: &[usize], value: f64) {
        self.insert(name, Tensor::full(shape, value));
    }
}

/// A graph plus the parameters bound into it as leaves.
pub struct Session<'a> {
    pub g: Graph,
    params: &'a ParamStore,
    bound: HashMap<String, Var>,
}

impl<'a> Session<'a> {
    pub fn new(params: &'a ParamStore) -> Self {
        Self {
            g: Graph::new(),
            params,
            bound: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'a ParamStore {
        self.params
    }

    /// Leaf for parameter `name`, created on first use.
    pub fn p(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let v = self.g.param(self.params.get(name)?.clone());
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.g.constant(t)
    }

    /// Names of parameters that participated in this session.
    pub fn bound_names(&self) -> impl Iterator<Item = &String> {
        self.bound.keys()
    }

    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.g.backward(loss)
    }

    /// Gradients of every bound parameter reached by backward.
    pub fn grads(&self) -> Grads {
        self.bound
            .iter()
            .filter_map(|(k, &v)| self.g.grad(v).map(|gr| (k.clone(), gr.to_vec())))
            .collect()
    }
}

/// Sum `src` into `dst` (fixed key order, deterministic).
pub fn accumulate_grads(dst: &mut Grads, src: &Grads) {
    for (k, v) in src {
        match dst.get_mut(k) {
            Some(acc) => acc.iter_mut().zip(v).for_each(|(a, b)| *a += b),
            None => {
                dst.insert(k.clone(), v.clone());
            }
        }
    }
}

pub fn scale_grads(grads: &mut Grads, c: f64) {
    for v in grads.values_mut() {
        v.iter_mut().for_each(|x| *x *= c);
    }
}

pub fn grad_norm(grads: &Grads) -> f64 {
    grads.values().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

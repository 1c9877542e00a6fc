use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::graph::{Gradients, Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named parameters plus the set of paths the optimizer may touch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    params: BTreeMap<String, Tensor>,
    trainable: BTreeSet<String>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, tensor: Tensor, trainable: bool) {
        let path = path.into();
        let mut tensor = tensor;
        tensor.requires_grad = trainable;
        tensor.grad = None;
        if trainable {
            self.trainable.insert(path.clone());
        } else {
            self.trainable.remove(&path);
        }
        self.params.insert(path, tensor);
    }

    /// Inserts a tensor drawn from `N(0, std²)`.
    pub fn insert_normal(&mut self, path: &str, shape: &[usize], std: f64, rng: &mut impl Rng, trainable: bool) {
        let normal = Normal::new(0.0, std).expect("finite std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| normal.sample(rng)).collect();
        self.insert(
            path,
            Tensor::new(shape.to_vec(), data).expect("consistent shape"),
            trainable,
        );
    }

    pub fn get(&self, path: &str) -> Result<&Tensor> {
        self.params
            .get(path)
            .ok_or_else(|| Error::UnknownParameter(path.to_string()))
    }

    pub fn get_mut(&mut self, path: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(path)
            .ok_or_else(|| Error::UnknownParameter(path.to_string()))
    }

    pub fn contains(&self, path: &str) -> bool {
        self.params.contains_key(path)
    }

    pub fn is_trainable(&self, path: &str) -> bool {
        self.trainable.contains(path)
    }

    pub fn set_trainable(&mut self, path: &str, trainable: bool) -> Result<()> {
        let t = self.get_mut(path)?;
        t.requires_grad = trainable;
        if !trainable {
            t.grad = None;
        }
        if trainable {
            self.trainable.insert(path.to_string());
        } else {
            self.trainable.remove(path);
        }
        Ok(())
    }

    /// Marks every parameter whose path satisfies `pred` as trainable and all
    /// others as frozen.
    pub fn retain_trainable(&mut self, pred: impl Fn(&str) -> bool) {
        let paths: Vec<String> = self.params.keys().cloned().collect();
        for p in paths {
            let on = pred(&p);
            self.set_trainable(&p, on).expect("path exists");
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn trainable_paths(&self) -> impl Iterator<Item = &String> {
        self.trainable.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn count_where(&self, pred: impl Fn(&str) -> bool) -> usize {
        self.params.iter().filter(|(p, _)| pred(p)).map(|(_, t)| t.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for t in self.params.values_mut() {
            t.grad = None;
        }
    }

    /// Adds `grad` into the stored gradient of `path`.
    pub fn accumulate_grad(&mut self, path: &str, grad: &[f64]) -> Result<()> {
        let t = self.get_mut(path)?;
        if grad.len() != t.len() {
            return Err(Error::shape("accumulate_grad", t.shape(), &[grad.len()]));
        }
        match &mut t.grad {
            Some(g) => g.iter_mut().zip(grad).for_each(|(a, b)| *a += b),
            None => t.grad = Some(grad.to_vec()),
        }
        Ok(())
    }

    /// Parameters bitwise equal, trainable masks equal; gradients ignored.
    pub fn bitwise_eq(&self, other: &ParameterStore) -> bool {
        self.trainable == other.trainable
            && self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|((pa, ta), (pb, tb))| pa == pb && ta.bitwise_eq(tb))
    }
}

/// Maps parameter paths onto graph leaves for one forward pass.
///
/// Leaves borrow the stored tensors; trainable parameters become leaves that
/// require gradients, frozen ones become constants.
pub struct Binder<'a> {
    store: &'a ParameterStore,
    bound: HashMap<String, Var>,
    /// Treat every parameter as a constant (inference).
    frozen: bool,
}

impl<'a> Binder<'a> {
    pub fn new(store: &'a ParameterStore) -> Self {
        Binder {
            store,
            bound: HashMap::new(),
            frozen: false,
        }
    }

    pub fn inference(store: &'a ParameterStore) -> Self {
        Binder {
            frozen: true,
            ..Binder::new(store)
        }
    }

    pub fn store(&self) -> &'a ParameterStore {
        self.store
    }

    /// Routes `path` to an existing graph variable instead of the stored
    /// tensor, e.g. to differentiate with respect to a single parameter.
    pub fn bind(&mut self, path: &str, var: Var) {
        self.bound.insert(path.to_string(), var);
    }

    pub fn param(&mut self, g: &mut Graph<'a>, path: &str) -> Result<Var> {
        if let Some(v) = self.bound.get(path) {
            return Ok(*v);
        }
        let t = self.store.get(path)?;
        let rg = !self.frozen && self.store.is_trainable(path);
        let v = g.leaf_ref(t, rg);
        self.bound.insert(path.to_string(), v);
        Ok(v)
    }

    /// Collects gradients of every bound trainable parameter, keyed by path.
    /// Trainable parameters unused by the graph receive zeros.
    pub fn gradients(&self, grads: &mut Gradients) -> Vec<(String, Vec<f64>)> {
        let mut out: Vec<(String, Vec<f64>)> = self
            .store
            .trainable_paths()
            .map(|p| {
                let g = self
                    .bound
                    .get(p)
                    .and_then(|v| grads.take(*v))
                    .unwrap_or_else(|| vec![0.0; self.store.get(p).map_or(0, Tensor::len)]);
                (p.clone(), g)
            })
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }
}

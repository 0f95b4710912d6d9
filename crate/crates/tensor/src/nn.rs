//! Composite building blocks and named parameter storage.

use std::cell::RefCell;
use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{contract, shape_err, Result};
use crate::graph::{Gradients, Graph, Var};
use crate::tensor::Tensor;

/// Single-head scaled dot-product attention, `softmax(q·kᵀ/√d)·v`.
pub fn attention(q: &Var, k: &Var, v: &Var) -> Result<Var> {
    let (qs, ks, vs) = (q.shape(), k.shape(), v.shape());
    if qs.len() != 2 || ks.len() != 2 || vs.len() != 2 || qs[1] != ks[1] || ks[0] != vs[0] {
        return Err(shape_err("attention", qs, ks));
    }
    let d = qs[1] as f64;
    let scores = q.matmul(&k.t()?)?.scale(1.0 / d.sqrt());
    scores.softmax(1)?.matmul(v)
}

/// Cosine similarity of two equally shaped tensors as a scalar.
///
/// Returns a constant 0 when either norm is below `1e-12`.
pub fn cosine(a: &Var, b: &Var) -> Result<Var> {
    if a.shape() != b.shape() {
        return Err(shape_err("cosine", a.shape(), b.shape()));
    }
    let na = a.value().data().iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.value().data().iter().map(|v| v * v).sum::<f64>().sqrt();
    if na < 1e-12 || nb < 1e-12 {
        return Ok(a.graph().scalar(0.0));
    }
    let dot = a.mul(b)?.sum();
    let norm_a = a.square().sum().sqrt();
    let norm_b = b.square().sum().sqrt();
    dot.div(&norm_a.mul(&norm_b)?)
}

/// `x·w + b` for `x: [L,in]`, `w: [in,out]`, `b: [out]`.
pub fn linear(x: &Var, w: &Var, b: &Var) -> Result<Var> {
    x.matmul(w)?.add(b)
}

/// Named parameters in deterministic (sorted) order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_map(params: BTreeMap<String, Tensor>) -> Self {
        Self { params }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), value);
    }

    /// Uniform in `[-1/√fan_in, 1/√fan_in]`.
    pub fn init_uniform<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        self.insert(name, Tensor::uniform(shape.to_vec(), -bound, bound, rng));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn as_map(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Checks that `other` holds exactly the same names and shapes.
    pub fn check_compatible(&self, other: &ParamStore) -> Result<()> {
        for (name, t) in &self.params {
            match other.params.get(name) {
                None => return Err(contract("params", format!("missing parameter `{name}`"))),
                Some(o) if o.shape() != t.shape() => {
                    return Err(shape_err("params", t.shape(), o.shape()))
                }
                _ => {}
            }
        }
        if let Some(extra) = other.params.keys().find(|k| !self.params.contains_key(*k)) {
            return Err(contract(
                "params",
                format!("unexpected parameter `{extra}`"),
            ));
        }
        Ok(())
    }

    /// Binds parameters to a graph; leaves are created on first access.
    pub fn bind(&self, graph: &Graph, trainable: bool) -> Bound<'_> {
        Bound {
            store: self,
            graph: graph.clone(),
            trainable,
            vars: RefCell::new(BTreeMap::new()),
        }
    }
}

/// Parameters as graph handles for one forward pass.
pub struct Bound<'a> {
    store: &'a ParamStore,
    graph: Graph,
    trainable: bool,
    vars: RefCell<BTreeMap<String, Var>>,
}

impl Bound<'_> {
    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        if let Some(v) = self.vars.borrow().get(name) {
            return Ok(v.clone());
        }
        let t = self
            .store
            .get(name)
            .ok_or_else(|| contract("params", format!("unknown parameter `{name}`")))?;
        let var = if self.trainable {
            self.graph.leaf(t.clone())
        } else {
            self.graph.constant(t.clone())
        };
        self.vars.borrow_mut().insert(name.to_string(), var.clone());
        Ok(var)
    }

    /// Gradients for every parameter touched during the pass.
    pub fn gradients(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        self.vars
            .borrow()
            .iter()
            .filter_map(|(name, var)| grads.get(var).map(|g| (name.clone(), g.clone())))
            .collect()
    }
}

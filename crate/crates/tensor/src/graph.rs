//! Computation record and differentiable handles.
//!
//! A [`Graph`] is an append-only list of nodes. Every operation on a [`Var`]
//! whose inputs require gradients appends one node holding the parent ids and
//! a backward closure over whatever activations it saved. Append order is a
//! topological order, so [`Graph::backward`] is a single reverse sweep.
//! Operations whose inputs are all constants are evaluated eagerly and never
//! recorded.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use crate::error::{contract, Result, TensorError};
use crate::tensor::Tensor;

pub(crate) type BackwardFn = Box<dyn Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>>>;

struct Node {
    op: &'static str,
    parents: Vec<Option<usize>>,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
struct Record {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Handle to a computation record. Cloning shares the record.
#[derive(Clone, Default)]
pub struct Graph {
    inner: Rc<RefCell<Record>>,
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rec = self.inner.borrow();
        f.debug_struct("Graph")
            .field("nodes", &rec.nodes.len())
            .field("consumed", &rec.consumed)
            .finish()
    }
}

/// A tensor value participating in a [`Graph`].
///
/// `id` is `None` for constants: they carry a value but no gradient.
#[derive(Clone)]
pub struct Var {
    graph: Graph,
    id: Option<usize>,
    value: Rc<Tensor>,
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.value.shape())
            .finish()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A grad-enabled leaf.
    pub fn leaf(&self, value: Tensor) -> Var {
        let mut rec = self.inner.borrow_mut();
        let id = rec.nodes.len();
        rec.nodes.push(Node {
            op: "leaf",
            parents: Vec::new(),
            backward: None,
        });
        Var {
            graph: self.clone(),
            id: Some(id),
            value: Rc::new(value),
        }
    }

    pub fn constant(&self, value: Tensor) -> Var {
        Var {
            graph: self.clone(),
            id: None,
            value: Rc::new(value),
        }
    }

    pub fn scalar(&self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub(crate) fn record(
        &self,
        op: &'static str,
        parents: &[&Var],
        value: Tensor,
        backward: impl Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>> + 'static,
    ) -> Var {
        let ids: Vec<Option<usize>> = parents.iter().map(|p| p.id).collect();
        if ids.iter().all(Option::is_none) {
            return self.constant(value);
        }
        debug_assert!(parents
            .iter()
            .all(|p| Rc::ptr_eq(&p.graph.inner, &self.inner)));
        let mut rec = self.inner.borrow_mut();
        let id = rec.nodes.len();
        rec.nodes.push(Node {
            op,
            parents: ids,
            backward: Some(Box::new(backward)),
        });
        Var {
            graph: self.clone(),
            id: Some(id),
            value: Rc::new(value),
        }
    }

    /// Name of the operation that produced node `id`.
    pub fn op_name(&self, id: usize) -> Option<&'static str> {
        self.inner.borrow().nodes.get(id).map(|n| n.op)
    }

    /// Reverse sweep from a scalar `loss`. Consumes the record: saved
    /// activations are released and a second call fails.
    pub fn backward(&self, loss: &Var) -> Result<Gradients> {
        if loss.value.len() != 1 {
            return Err(contract(
                "backward",
                format!("loss must be scalar, got shape {:?}", loss.value.shape()),
            ));
        }
        let mut rec = self.inner.borrow_mut();
        if rec.consumed {
            return Err(TensorError::Consumed);
        }
        rec.consumed = true;
        let nodes = std::mem::take(&mut rec.nodes);
        drop(rec);

        let mut grads: HashMap<usize, Tensor> = HashMap::new();
        let Some(root) = loss.id else {
            return Ok(Gradients { grads });
        };
        grads.insert(root, Tensor::full(loss.value.shape().to_vec(), 1.0));
        let mut leaves: HashMap<usize, Tensor> = HashMap::new();
        for id in (0..=root).rev() {
            let Some(g) = grads.remove(&id) else { continue };
            let node = &nodes[id];
            match &node.backward {
                None => {
                    leaves.insert(id, g);
                }
                Some(f) => {
                    let needs: Vec<bool> = node.parents.iter().map(Option::is_some).collect();
                    let parent_grads = f(&g, &needs);
                    for (pid, pg) in node.parents.iter().zip(parent_grads) {
                        if let (Some(pid), Some(pg)) = (pid, pg) {
                            match grads.get_mut(pid) {
                                Some(acc) => acc.add_assign(&pg),
                                None => {
                                    grads.insert(*pid, pg);
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(Gradients { grads: leaves })
    }
}

/// Gradients of grad-enabled leaves reached by a backward sweep.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: HashMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: &Var) -> Option<&Tensor> {
        var.id.and_then(|id| self.grads.get(&id))
    }

    /// Gradient of `var`, or zeros of its shape when it was unreachable.
    pub fn get_or_zeros(&self, var: &Var) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape().to_vec()))
    }
}

impl Var {
    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn item(&self) -> f64 {
        self.value.item()
    }

    pub fn requires_grad(&self) -> bool {
        self.id.is_some()
    }

    pub fn id(&self) -> Option<usize> {
        self.id
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var {
        Var {
            graph: self.graph.clone(),
            id: None,
            value: self.value.clone(),
        }
    }

    pub(crate) fn value_rc(&self) -> Rc<Tensor> {
        self.value.clone()
    }
}

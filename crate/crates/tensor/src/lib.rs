//! Dense `f64` tensors with tape-based reverse-mode differentiation.
//!
//! [`Tensor`] is a plain row-major array. [`Graph`] records operations
//! performed on [`Var`] handles; [`Graph::backward`] sweeps the record in
//! reverse append order and returns [`Gradients`] for every grad-enabled leaf.
//!
//! ```
//! use robomask_tensor::{Graph, Tensor};
//!
//! let g = Graph::new();
//! let x = g.leaf(Tensor::new([3], vec![1.0, -2.0, 0.5]).unwrap());
//! let loss = x.square().sum();
//! let grads = g.backward(&loss).unwrap();
//! assert_eq!(grads.get(&x).unwrap().data(), &[2.0, -4.0, 1.0]);
//! ```

pub mod checkpoint;
mod conv;
mod error;
pub mod gradcheck;
mod graph;
pub mod nn;
mod ops;
mod tensor;

pub use conv::bilinear_matrix;
pub use error::{Result, TensorError};
pub use graph::{Gradients, Graph, Var};
pub use nn::{attention, cosine, linear, Bound, ParamStore};
pub use ops::{concat, sigmoid};
pub use tensor::Tensor;

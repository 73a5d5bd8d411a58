//! Reverse-mode automatic differentiation over dense, row-major `f64` tensors.
//!
//! Computation is recorded on a [`Graph`] (the tape) through [`Var`] handles.
//! Calling [`Graph::backward`] on a scalar result walks the tape once in
//! reverse and returns [`Gradients`] for every node that requires them.
//!
//! Trainable state lives outside the tape in [`ModelParams`]; a [`Session`]
//! binds parameters onto a fresh graph for one forward/backward pass, and the
//! [`Adam`] optimizer consumes the collected gradients.
//!
//! ```
//! use jfp_autograd::{Graph, Tensor};
//!
//! let g = Graph::new();
//! let x = g.param(Tensor::scalar(3.0));
//! let loss = x.square();
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().item(), 6.0);
//! ```

mod error;
mod graph;
mod kernels;
pub mod nn;
mod optim;
mod params;
mod tensor;

pub use error::TensorError;
pub use graph::{Gradients, Graph, Var};
pub use nn::{BatchNorm, Conv2d, Dense, Mode, Session, SessionUpdate};
pub use optim::{plateau_lr, Adam, PlateauScheduler};
pub use params::{read_checkpoint, write_checkpoint, ModelParams, NamedTensor, Parameter};
pub use tensor::Tensor;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

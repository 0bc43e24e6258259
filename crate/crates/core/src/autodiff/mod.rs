//! Dense `f64` tensors with a define-by-run reverse-mode tape.

mod graph;
mod optim;
mod params;
mod tensor;

pub use graph::{Graph, Var};
pub use optim::{Adam, AdamConfig};
pub use params::{accumulate_grads, grad_norm, scale_grads, Grads, ParamStore, Session};
pub use tensor::Tensor;

//! Dense `f64` tensors with a reverse-mode tape, transformer layers and Adam.

pub mod checkpoint;
pub mod gradcheck;
mod graph;
pub mod kernels;
pub mod nn;
mod optim;
mod params;
mod tensor;

pub use graph::{causal_spans, Graph, KeySpans, Var, LAYER_NORM_EPS};
pub use optim::Adam;
pub use params::{Param, ParamId, ParamStore};
pub use tensor::Tensor;

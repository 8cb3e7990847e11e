//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`); the rest of the
//! crate instantiates it at `f64` through the aliases in the crate root.

mod graph;
mod kernels;
mod params;
mod tensor;

pub use graph::{Elementwise, Gradients, Graph, Var};
pub use kernels::{gelu, matmul_t_into};
pub use params::{ParamId, ParamSet};
pub use tensor::{Scalar, Tensor};

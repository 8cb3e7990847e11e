//! Modality-augmented diffusion policies for planar pick-and-place.
//!
//! The crate trains miniature diffusion-transformer policies on synthetic
//! demonstrations and evaluates how contact and depth conditioning change
//! offline reconstruction error and closed-loop success.

pub mod demogen;
pub mod diffusion;
pub mod evalkit;
pub mod error;
pub mod gradcore;
pub mod nets;
pub mod simenv;
pub mod trainer;

pub use error::{Error, Result};

/// Tensor at the working precision.
pub type Tensor = gradcore::Tensor<f64>;
/// Computation graph at the working precision.
pub type Graph<'p> = gradcore::Graph<'p, f64>;
/// Parameter store at the working precision.
pub type ParamSet = gradcore::ParamSet<f64>;
pub type Gradients = gradcore::Gradients<f64>;

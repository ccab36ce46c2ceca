//! Small deterministic reverse-mode differentiation substrate.
//!
//! A [`Graph`] records operations on [`Tensor`] values; leaves registered
//! with `requires_grad` receive gradients from [`Graph::backward`]. Only the
//! operations needed by the generator, the feature extractor and the losses
//! exist. Everything is `f64`.

mod adam;
mod gradcheck;
mod graph;
mod tensor;


pub use adam::{Adam, Update};
pub use gradcheck::check_gradients;
pub use graph::{downsample_avg, Gradients, Graph, Var};
pub use tensor::Tensor;

/// Epsilon used inside AdaIN's normalization.
pub const ADAIN_EPS: f64 = 1e-5;

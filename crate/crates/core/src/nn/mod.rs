//! Dense tensors, reverse-mode autodiff, MLPs, Adam and Gaussian helpers.

pub mod adam;
pub mod checkpoint;
pub mod gaussian;
pub mod gradcheck;
pub mod mat;
pub mod mlp;
pub mod tape;

pub use adam::OptimState;
pub use mat::Mat;
pub use mlp::{grad, Activation, Gradient, Layer, MlpParams, MlpVars, Params};
pub use tape::{Tape, Var};

//! Minimal reverse-mode differentiation over dense `f64` tensors.

mod gradcheck;
mod graph;
pub mod fuzz;
pub mod kernels;
mod optim;
mod params;
mod tensor;

pub use gradcheck::{check_gradients, check_gradients_with, GradCheckOptions};
pub use graph::{sigmoid, softplus, Graph, NodeId, Op};
pub use optim::{apply_update, OptimizerConfig, OptimizerKind, OptimizerState};
pub use params::ParamSet;
pub use tensor::Tensor;

//! Minimal reverse-mode automatic differentiation over dense f32 tensors.
//!
//! Supplies parameter gradients for training and input gradients for
//! integrated-gradients attribution. Inference goes through the pure
//! kernel functions and never touches a graph.

mod graph;
mod kernels;
pub mod reference;
mod tensor;

pub use graph::{grad_check, grad_check_component, Gradients, Graph, NodeId, ScalarFn, Var};
pub use kernels::{
    activation, add, conv2d, dense, global_avg_pool, mse_loss, pad2d, scale, Activation,
};
pub use tensor::Tensor;

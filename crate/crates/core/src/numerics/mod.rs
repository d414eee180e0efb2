//! Dense f64 tensors, a tape-based reverse-mode autodiff graph, Adam, and a
//! finite-difference gradient checker.

mod adam;
mod gradcheck;
mod graph;
pub mod kernels;
mod tensor;

pub use adam::{Adam, AdamState};
pub use gradcheck::{grad_check, GradCheckOptions};
pub use graph::{sigmoid, softplus, Gradients, Graph, Var};
pub use tensor::{stable_log_softmax, Tensor};

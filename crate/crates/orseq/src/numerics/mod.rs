//! Differentiable computation substrate: dense tensors, a define-by-run
//! reverse-mode tape over a closed op set, a finite-difference gradient
//! oracle, and a documented deterministic RNG.

pub mod graph;
pub mod rng;
pub mod tensor;

pub use graph::{
    finite_diff_gradients, max_scaled_error, GradStore, Graph, NodeId, ParamId, ParamSet,
};
pub use rng::Rng;
pub use tensor::{argmax_slice, log_softmax_slice, softmax_slice, Tensor};

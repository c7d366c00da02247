//! Dense tensors, the operator set, and reverse-mode differentiation.

pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod tensor;

pub use gradcheck::{grad_check, grad_check_many, GradCheckReport};
pub use graph::{CustomOp, EwiseKind, Graph, Var};
pub use tensor::{Real, Tensor};

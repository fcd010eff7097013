//! Dense `f64` tensors, a reverse-mode tape, and a finite-difference checker.

pub mod gradcheck;
pub mod tape;
pub mod tensor;

pub use gradcheck::{
    central_differences, compare_gradients, finite_diff_check, relative_error, GradCheckReport,
};
pub use tape::{Gradients, Graph, Var, Vjp};
pub use tensor::Tensor;

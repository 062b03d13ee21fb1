//! Dense 64-bit numeric substrate: a row-major tensor, the differentiable
//! primitives the ranking model is built from (each with a hand-written
//! backward), a named parameter table, and a central-difference gradient
//! checker.

mod gradcheck;
pub mod ops;
mod params;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use params::{Gradients, ParamId, ParamTable};
pub use tensor::Tensor;

//! Dense tensors and reverse-mode differentiation.

pub mod gradcheck;
pub mod kernels;
mod params;
mod real;
mod tape;
mod tensor;

pub use params::{ParamId, ParamSet, Parameter};
pub use real::{DType, MatRef, Real};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

//! Reverse-mode automatic differentiation over dense f32 tensors.

mod adam;
mod gradcheck;
pub mod kernels;
pub mod nn;
mod params;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use gradcheck::{analytic_grad, grad_check, grad_check_coords};
pub use params::{Bound, ParamId, ParamSet};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
pub(crate) use tape::sigmoid;


//! Dense tensors, reverse-mode differentiation and the Adam optimizer.

mod adam;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::Adam;
pub use gradcheck::{grad_check, grad_check_params, primitive_grad_check, DEFAULT_STEP};
pub use params::{uniform, BoundParams, GradMap, ParamStore};
pub use tape::{softmax_row, Gradients, Primitive, Tape, Var, LAYER_NORM_EPS, LOG_CLAMP};
pub use tensor::Tensor;

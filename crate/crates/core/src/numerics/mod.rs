//! Dense tensors, tape-based reverse-mode differentiation, Adam and
//! finite-difference gradient verification.

mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use optim::{clip_global_norm, Adam, AdamConfig};
pub use params::{bind_all, Init, ParamStore};
pub use tape::{log_softmax_at, matmul_plain, sigmoid, softmax, Axis, Gradients, Tape, Var};
pub use tensor::{Scalar, Tensor};

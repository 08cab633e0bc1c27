//! Dense `f64` tensors and a reverse-mode tape over them.

mod tape;
mod tensor;

pub use tape::{FireInterval, Tape, Var, LAYERNORM_EPS};
pub use tensor::Tensor;

//! Dense `f64` tensors, the primitive kernels the CLSTM needs, a
//! reverse-mode tape over them, and the Adam optimizer.

pub mod adam;
pub mod ops;
pub mod tape;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

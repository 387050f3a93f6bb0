//! Minimal dense tensor engine: reverse-mode gradients over a define-by-run
//! tape, plus a deterministic cyclic-Jacobi symmetric eigensolver.
//!
//! The tape is rebuilt on every forward pass. Tensors are plain row-major
//! buffers; only scalar-with-tensor and equal-shape broadcasting exist, and
//! every structural operation (row/column concat, slicing, row selection) is
//! its own recorded op with an explicit backward rule.

mod eig;
mod tape;
mod tensor;


pub use eig::sym_eig;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::sigmoid as sigmoid_scalar;

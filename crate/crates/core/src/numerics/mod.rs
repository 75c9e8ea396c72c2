//! Dense tensors, the arbitrary-length DFT, and gradient checking.

pub mod dft;
pub mod grad;
pub mod tensor;

pub use dft::{dft, half_spectrum, idft, idft_complex, FftPlan, Spectrum};
pub use grad::{grad_check, Differentiable, FnOp, GradTape, Var};
pub use tensor::Tensor;

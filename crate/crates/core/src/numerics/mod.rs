//! Minimal reverse-mode tensor core: the operations the model graph needs,
//! their backward rules, and finite-difference verification.

mod gemm;
pub mod gradcheck;
mod ops;
pub mod par;
mod scalar;
mod tape;
mod tensor;

#[doc(hidden)]
pub use ops::GELU_BACKWARD_SIGN_FLIP;
pub use scalar::{lit, Float};
pub use tape::{CustomBackward, Tape};
pub use tensor::Tensor;

//! Dense tensors, reverse-mode autodiff over a fixed op vocabulary, and a
//! central-difference gradient checker.
//!
//! Training and inference run in `f32`; every op is generic over [`Real`] so
//! gradient checks can run the identical code path in `f64`.

mod gradcheck;
mod graph;
mod rng;
mod tensor;

pub use gradcheck::{grad_check, grad_check_many, GradCheckReport, GRAD_CHECK_STEP};
pub use graph::{Grads, Graph, Var};
pub use rng::{RngState, RNG_ALGORITHM};
pub use tensor::{Real, Tensor};

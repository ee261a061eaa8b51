//! Minimal reverse-mode differentiation over [`Tensor`](crate::Tensor)
//! values: a dynamic tape, the primitives the deformation and segmentation
//! networks need, and a finite-difference checker.

mod gradcheck;
pub mod ops;
mod tape;

pub use gradcheck::{grad_check, grad_check_coords, relative_error, GradReport};
pub use tape::{BackwardFn, Tape, Var};

//! Dense reverse-mode differentiation whose gradients are themselves
//! differentiable.

mod backward;
mod check;
pub mod kernels;
mod tape;

pub use check::{central_difference, finite_diff_check, max_relative_error};
pub use tape::{Tape, Var};

#[cfg(test)]
mod tests;

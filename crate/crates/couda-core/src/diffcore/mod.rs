//! Minimal reverse-mode differentiation core.

mod gradcheck;
mod tape;

pub use gradcheck::{grad_check, max_rel_error_fd, rel_error};
pub use tape::{Tape, Tensor, Var};

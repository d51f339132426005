//! Dense matrices, reverse-mode differentiation, and the Adam optimizer.

pub mod adam;
pub mod decomp;
pub mod gradcheck;
mod gumbel;
mod matrix;
pub mod tape;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use gumbel::{gumbel_softmax, sample_gumbel};
pub use matrix::Matrix;
pub use tape::{Activation, Gradients, Tape, Var};

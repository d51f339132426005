//! Neural manifold clustering and embedding.
//!
//! An MLP encoder maps points to unit-sphere features and soft cluster
//! assignments. Training maximizes the coding rate of all features while
//! minimizing the rate of each cluster, with an augmentation-consistency
//! term that makes the clusters identifiable.
//!
//! Modules:
//! - [`linalg`]: matrices, reverse-mode differentiation, Adam
//! - [`objectives`]: coding rate, rate reduction, TCR and NMCE losses
//! - [`model`]: MLP encoder with feature and cluster heads, checkpoints
//! - [`data`]: synthetic manifold generators, augmentation, CSV I/O
//! - [`training`]: multistage trainer and run configuration
//! - [`eval`]: clustering metrics and feature diagnostics
//! - [`check`]: self-check suite (gradient, identity and metric oracles)

pub mod check;
pub mod data;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod model;
pub mod objectives;
pub mod rng;
pub mod training;

pub use error::{NmceError, Result};
pub use linalg::{Matrix, Tape, Var};

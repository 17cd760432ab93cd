//! Coupled nonnegative CP decomposition.
//!
//! Jointly factorizes `S` nonnegative tensors whose mode-`n` factor matrices
//! share a leading block of `L_n` columns, using alternating proximal
//! gradient steps with Nesterov-type extrapolation and a monotone restart.
//! An optional low-rank mode first compresses every tensor with an
//! unconstrained CP fit so that each iteration only touches small matrices.
//!
//! Modules:
//! - [`tensor`]: dense storage and multilinear kernels
//! - [`kruskal`]: CP models and coupled factor sets
//! - [`als`]: unconstrained CP-ALS used for compression
//! - [`solver`]: the coupled solver
//! - [`metrics`]: evaluation quantities and model-order helpers
//! - [`synth`]: ground-truth coupled problem generator
//! - [`io`]: text file formats

pub mod als;
pub mod error;
pub mod exec;
pub mod io;
pub mod kruskal;
pub mod metrics;
pub mod solver;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use exec::Execution;
pub use kruskal::{BlockFactors, CoupledFactorSet, KruskalTensor};
pub use tensor::{DenseTensor, Matrix};

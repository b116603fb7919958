#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Multitime correlation functions of open quantum systems with finite
//! memory, evaluated exactly by factorizing at gaps longer than the memory
//! time and checked against propagation of a Markovian embedding.
//!
//! Units: energies in meV, times in ps, rates in 1/ps.
//!
//! Conventions:
//! - operators are vectorized column-major, `k = i + D j`, so that
//!   `vec(A X B) = (B^T (x) A) vec(X)`;
//! - composite Hilbert spaces put the system index slow, `s D_E + e`.

pub mod config;
pub mod correlators;
pub mod error;
pub mod linalg;
pub mod liouville;
pub mod maps;
pub mod models;
pub mod observables;
pub mod propagation;
pub mod quadrature;
pub mod runner;
pub mod tolerances;

pub use error::{Error, Result};
pub use models::K_B;

/// Reduced Planck constant in meV ps.
pub const HBAR: f64 = 0.6582119569;

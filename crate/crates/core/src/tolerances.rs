//! Numerical thresholds used across the engine.
//!
//! The ladder runs from map stationarity down to observables; each stage
//! multiplies conditioning, so every stage gets its own budget.
//!
//! | Stage        | Value  |
//! |--------------|--------|
//! | stationarity | 1e-12  |
//! | maps         | 1e-10  |
//! | correlators  | 1e-8   |
//! | observables  | 1e-6   |

/// Default Frobenius threshold between adjacent time-local maps.
pub const STATIONARITY: f64 = 1e-12;

/// Map-level checks: trace and Hermiticity preservation, biorthogonality.
pub const MAP: f64 = 1e-10;

/// Correlator-level agreement between engines.
pub const CORRELATOR: f64 = 1e-8;

/// Observable-level agreement (spectra, relative to peak).
pub const OBSERVABLE: f64 = 1e-6;

/// Absolute max-norm tolerance for Hermiticity of input Hamiltonians.
pub const HERMITICITY: f64 = 1e-12;

/// Above this the inverse of a dynamical map is refused.
pub const MAX_INVERSE_CONDITION: f64 = 1e12;

/// Above this the eigenvector matrix of the stationary map counts as defective.
pub const MAX_EIGENVECTOR_CONDITION: f64 = 1e10;

/// Largest admissible eigenvalue modulus of a stationary map.
pub const MAX_EIGEN_MODULUS: f64 = 1.0 + 1e-8;

/// Rates with modulus below this are treated as the steady state.
pub const ZERO_RATE: f64 = 1e-8;

/// Convergence of the substep-doubling loop for pulse propagators.
pub const PULSE_CONVERGENCE: f64 = 1e-9;

/// Stationary-mode emission coefficient above which time integrals diverge.
pub const DIVERGENCE: f64 = 1e-10;

/// Cap on the composite Liouville dimension (D * D_E)^2.
pub const MAX_COMPOSITE_LIOUVILLE_DIM: usize = 1024;

use thiserror::Error;

/// Errors raised by the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("ill-conditioned inverse in {context}: condition number {cond:.3e}")]
    IllConditioned { context: &'static str, cond: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("{context} did not converge: achieved {achieved:.3e}")]
    NotConverged { context: &'static str, achieved: f64 },

    #[error(
        "stationary map is defective (eigenvector condition number {cond:.3e}); try a slightly different time step"
    )]
    Defective { cond: f64 },

    #[error("stationary map eigenvalue modulus {modulus:.12} exceeds one; the map is not contractive")]
    Unstable { modulus: f64 },

    #[error("eigenvalue phase {phase:.4} rad per step is too close to pi; reduce the time step to avoid aliasing")]
    Aliasing { phase: f64 },

    #[error("steady state is not unique: rates {first} and {second} are both near zero")]
    SteadyStateNotUnique { first: String, second: String },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("time integral diverges: stationary-mode emission coefficient {coefficient:.3e} above threshold")]
    Divergent { coefficient: f64 },

    #[error("composite Liouville dimension {dim} exceeds cap {cap}")]
    ResourceCap { dim: usize, cap: usize },

    #[error("linear algebra failure: {0}")]
    Linalg(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(err: ndarray_linalg::error::LinalgError) -> Self {
        Error::Linalg(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

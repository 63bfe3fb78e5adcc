//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, GrfError>;

/// Errors produced by kernel construction, the analytic formulas and the
/// Monte Carlo drivers.
#[derive(Debug, Error)]
pub enum GrfError {
    /// A vector or matrix does not match the model dimension.
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    /// Kernel parameters violate a documented validity bound.
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    /// An operation that requires a standardized model (Hessian of the
    /// covariance at the origin equal to -I) was called on a raw model.
    #[error(
        "model is not standardized: max |Hessian(C)(0) + I| = {max_deviation:.3e} exceeds 1e-10"
    )]
    NotStandardized { max_deviation: f64 },

    /// The Hessian of the covariance at the origin is singular or indefinite,
    /// so no affine standardization exists.
    #[error("covariance Hessian at 0 is not negative definite: {0}")]
    SingularHessian(String),

    /// The threshold equation has no root in its monotone region.
    #[error("threshold b = {b:.6e} is infeasible; the minimum admissible b is {b_min:.6e}")]
    InfeasibleThreshold { b: f64, b_min: f64 },

    /// Spectral moments that cannot come from a valid covariance
    /// (Gamma fails to be positive definite).
    #[error("invalid spectral moments: {0}")]
    InvalidMoments(String),

    /// Dense factorization failed even after the jitter ladder.
    #[error("ill-conditioned covariance: {0}")]
    IllConditioned(String),

    /// Domain with no boxes, or boxes with empty interior.
    #[error("empty or degenerate domain")]
    EmptyDomain,

    /// Catch-all for argument validation.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

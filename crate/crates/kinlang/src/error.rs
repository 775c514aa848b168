//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Configuration file could not be parsed or failed validation.
    #[error("config error: {0}")]
    Config(String),

    /// A model parameter violates its stated bounds (λ range, α floor, scales).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A Poisson-type solve has a right-hand side that is not orthogonal to
    /// the kernel of the adjoint; carries the offending centering residual.
    #[error("solvability failure in {context}: centering residual {residual:.3e} exceeds {tolerance:.1e}")]
    Solvability {
        context: &'static str,
        residual: f64,
        tolerance: f64,
    },

    /// Bordered linear system could not be factorized.
    #[error("singular bordered solve in {0}")]
    SingularSolve(&'static str),

    /// Post-solve residual above tolerance, or two independent solution
    /// routes disagree beyond tolerance: the truncation is too small.
    #[error("truncation failure in {context}: {detail} ({value:.3e} > {tolerance:.1e})")]
    Truncation {
        context: &'static str,
        detail: &'static str,
        value: f64,
        tolerance: f64,
    },

    /// The Hermite-degree-0 component of the second corrector equation does
    /// not vanish: the overdamped cell solution and the expansion ladder are
    /// mutually inconsistent (arises for λ ≠ 1 scalings or a miscalibrated drift).
    #[error("centering mismatch in corrector ladder: degree-0 residual {0:.3e}")]
    CenteringMismatch(f64),

    /// A homogenized mobility matrix failed the symmetric-positive-definite check.
    #[error("homogenized mobility not positive definite: min eigenvalue {0:.3e}")]
    NotPositiveDefinite(f64),

    /// Simulation step-size rule violated.
    #[error("step size {h:.3e} exceeds h_max {h_max:.3e} = c_r δ²√m/ε")]
    StepTooLarge { h: f64, h_max: f64 },

    /// A trajectory produced a non-finite state.
    #[error("non-finite state in path {path} at step {step}")]
    NonFiniteState { path: u64, step: usize },

    /// Importance-sampling request rejected or its weights overflowed.
    #[error("importance sampling: {0}")]
    ImportanceSampling(String),

    /// A path evaluation left the coefficient q-grid.
    #[error("path leaves q-grid coverage at q = {0:.6}")]
    QGridCoverage(f64),

    /// Underlying I/O failure while writing artifacts.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

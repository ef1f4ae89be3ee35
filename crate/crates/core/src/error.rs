//! Error taxonomy shared by every module in the crate.

use thiserror::Error;

/// Crate-wide error type.
///
/// Numerical routines return `QuadratureFailure` with their best estimate
/// attached so callers can decide whether a degraded answer is usable.
#[derive(Debug, Clone, Error)]
pub enum CoreError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Geometry that admits no well-defined construction, e.g. a velocity
    /// sitting exactly on the beam point.
    #[error("degenerate state: {0}")]
    DegenerateState(String),

    /// Adaptive integration ran out of its evaluation budget before the
    /// tolerance was met. `best` is the estimate at abort time.
    #[error("quadrature did not converge: best={best:.6e}, err={err_bound:.3e}, evals={evaluations}")]
    QuadratureFailure {
        best: f64,
        err_bound: f64,
        evaluations: u64,
    },

    /// Integrand configuration with a non-integrable singularity.
    #[error("singular configuration: {0}")]
    SingularConfiguration(String),

    /// Rate-product inversion integral that does not converge (fewer than
    /// two poles in total).
    #[error("divergent integral: {0}")]
    DivergentIntegral(String),

    /// A particle moving exactly parallel to the wall has no well-defined
    /// free path per unit depth.
    #[error("grazing state: velocity has zero wall-normal component")]
    GrazingState,
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CoreError::InvalidArgument(msg.into())
    }

    pub fn degenerate(msg: impl Into<String>) -> Self {
        CoreError::DegenerateState(msg.into())
    }
}

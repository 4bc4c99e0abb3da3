use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("alpha must be < 1 for a well-posed equation (got {0})")]
    AlphaOutOfRange(f64),

    #[error("diffusion coefficient is degenerate: grid infimum of |sigma| is {inf_abs} on [{lo}, {hi}]")]
    DegenerateDiffusion { inf_abs: f64, lo: f64, hi: f64 },

    #[error("{coefficient}: derivative of order {order} disagrees with central differences at x = {x} (error {error:.3e})")]
    InconsistentDerivatives {
        coefficient: String,
        order: u8,
        x: f64,
        error: f64,
    },

    #[error("{coefficient}: declared bound {declared} on order-{order} sup-norm is exceeded by the grid value {observed}")]
    DeclaredBoundExceeded {
        coefficient: String,
        order: u8,
        declared: f64,
        observed: f64,
    },

    #[error("derivative order {0} is not supported (0, 1 or 2)")]
    UnsupportedOrder(u8),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value at step {step}{}", path.map(|p| format!(" of path {p}")).unwrap_or_default())]
    NonFinite { step: usize, path: Option<u64> },

    #[error("Picard iteration did not reach tolerance {tol:e} in {iterations} iterations (last sup-difference {last:e})")]
    NoConvergence { iterations: usize, tol: f64, last: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("transform domain [{lo}, {hi}] is too small: {detail}")]
    DomainTooSmall { lo: f64, hi: f64, detail: String },

    #[error("argument {value} is outside the tabulated range [{lo}, {hi}]")]
    OutOfDomain { value: f64, lo: f64, hi: f64 },

    #[error("numerical integration failed: {0}")]
    IntegrationFailure(String),

    #[error("sample is empty or too small for density estimation (n = {0})")]
    EmptySample(usize),

    #[error("coefficient `{0}` cannot be serialized")]
    NotSerializable(String),
}

impl Error {
    /// Errors caused by the user's problem description rather than by numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::AlphaOutOfRange(_)
                | Error::DegenerateDiffusion { .. }
                | Error::InconsistentDerivatives { .. }
                | Error::DeclaredBoundExceeded { .. }
                | Error::UnsupportedOrder(_)
                | Error::InvalidParameter(_)
                | Error::GridMismatch(_)
                | Error::DomainTooSmall { .. }
                | Error::EmptySample(_)
                | Error::NotSerializable(_)
        )
    }
}

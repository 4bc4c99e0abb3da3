//! Numerical laboratory for diffusions perturbed by their running maximum,
//!
//! ```text
//! X_t = x0 + ∫₀ᵗ b(X_s) ds + ∫₀ᵗ σ(X_s) dB_s + α · sup_{s ≤ t} X_s,   α < 1.
//! ```
//!
//! * [`model`]: coefficients, problem specs, grids, validation.
//! * [`integrate`]: Euler paths with the max term resolved implicitly, Picard iteration,
//!   and the closed-form driftless solution.
//! * [`malliavin`]: pathwise Malliavin derivatives `D_r X_t`, H-norms, a Cameron-Martin
//!   finite-difference oracle and checks against the lower bounds.
//! * [`bounds`]: the θ threshold, the Malliavin-norm bounds and the admissible horizon.
//! * [`lamperti`]: the unit-diffusion transform for multiplicative noise.
//! * [`density`]: Monte Carlo ensembles, kernel density estimates, smoothness diagnostics
//!   and a reference density for the driftless case.
//! * [`verify`]: the invariant suites behind `pdlab verify`.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod density;
pub mod error;
pub mod hermite;
pub mod integrate;
pub mod lamperti;
pub mod malliavin;
pub mod model;
pub mod noise;
pub mod quadrature;
pub mod verify;

pub use error::{Error, Result};
pub use model::{Coefficient, GridSpec, ProblemSpec, ValidatedSpec};
pub use noise::NoiseBlock;

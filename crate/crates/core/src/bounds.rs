//! Closed-form regime threshold and Malliavin-norm bounds.
//!
//! `θ(t0, α, L) = √(2L²t0² + 8α²) + L²t0² + 4α²`, with `L = ‖b′‖_∞`. The regime
//! `θ < 1/2` is where the lower bounds below are positive.

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::lamperti;
use crate::model::{sup_norm_estimate, BoundSource, ValidatedSpec};

pub fn theta(t0: f64, alpha: f64, lb: f64) -> f64 {
    let u = lb * lb * t0 * t0;
    let a2 = alpha * alpha;
    (2.0 * u + 8.0 * a2).sqrt() + u + 4.0 * a2
}

/// Right-hand side of the two-time difference bound on `‖DX_t‖²_H`.
pub fn diff_bound(t1: f64, t2: f64, alpha: f64, lb: f64, sup_dx2: f64) -> f64 {
    2.0 * theta(t2 - t1, alpha, lb) * sup_dx2
}

/// Lower bound on `sup_{s≤t} ‖DX_s‖²_H`: `σ̄²t / (2(1 + 2L²t² + 2α²))`.
pub fn sup_lower_bound(t: f64, alpha: f64, lb: f64, sigma_bar: f64) -> f64 {
    sigma_bar * sigma_bar * t / (2.0 * (1.0 + 2.0 * lb * lb * t * t + 2.0 * alpha * alpha))
}

/// Lower bound on `‖DX_t‖²_H` for `t ≤ t0`: `(1 − 2θ(t0))·sup_lower_bound(t)`.
/// Negative outside the admissible regime; callers check admissibility.
pub fn final_lower_bound(t: f64, t0: f64, alpha: f64, lb: f64, sigma_bar: f64) -> f64 {
    (1.0 - 2.0 * theta(t0, alpha, lb)) * sup_lower_bound(t, alpha, lb, sigma_bar)
}

/// Largest horizon with `θ < 1/2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Horizon {
    /// `θ(0) ≥ 1/2`: no admissible horizon.
    Zero,
    Finite(f64),
    /// `L = 0` and `θ(0) < 1/2`: θ does not depend on the horizon.
    Infinite,
}

impl Horizon {
    pub fn as_f64(self) -> f64 {
        match self {
            Horizon::Zero => 0.0,
            Horizon::Finite(t) => t,
            Horizon::Infinite => f64::INFINITY,
        }
    }
}

impl Serialize for Horizon {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Horizon::Infinite => s.serialize_str("inf"),
            other => s.serialize_f64(other.as_f64()),
        }
    }
}

const BISECTION_RTOL: f64 = 1e-12;

/// Bisects an increasing function for `f(x) = 1/2` on `[lo, hi]` with `f(lo) < 1/2 ≤ f(hi)`.
fn bisect_half(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= BISECTION_RTOL * hi.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Inverts `θ(t0, α, L) = 1/2` for `t0` by bisection.
pub fn max_horizon(alpha: f64, lb: f64) -> Horizon {
    let lb = lb.abs();
    if theta(0.0, alpha, lb) >= 0.5 {
        return Horizon::Zero;
    }
    if lb == 0.0 {
        return Horizon::Infinite;
    }
    let mut hi = 1.0 / lb;
    while theta(hi, alpha, lb) < 0.5 {
        hi *= 2.0;
    }
    Horizon::Finite(bisect_half(|t| theta(t, alpha, lb), 0.0, hi))
}

/// Largest `|α|` with `θ(t0, α, L) < 1/2`, by bisection (0 when even `α = 0` fails).
pub fn alpha_threshold(t0: f64, lb: f64) -> f64 {
    if theta(t0, 0.0, lb) >= 0.5 {
        return 0.0;
    }
    bisect_half(|a| theta(t0, a, lb), 0.0, 1.0)
}

/// Where the drift Lipschitz constant in a report came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftSource {
    /// `‖b′‖_∞` declared by the user.
    Declared,
    /// Grid estimate of `‖b′‖_∞`.
    Grid,
    /// Grid estimate of `‖b̃′‖_∞` for the unit-diffusion transform.
    TransformGrid,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegimeReport {
    pub theta_at_t0: f64,
    pub admissible: bool,
    pub t0: f64,
    pub t0_max: Horizon,
    /// `(t, final lower bound on ‖DX_t‖²_H)` on 100 points of `[0, min(t0, t0_max)]`.
    pub lower_bound_curve: Vec<(f64, f64)>,
    pub alpha: f64,
    pub lb: f64,
    pub lb_source: DriftSource,
    /// Constant `|σ|`, or `inf |σ|` when the report goes through the transform.
    pub sigma_bar: f64,
    pub transformed: bool,
}

pub const CURVE_POINTS: usize = 100;

/// Regime report for a validated spec. Constant σ uses `b` directly; otherwise the
/// drift of the unit-diffusion transform is used and the curve is lifted by `inf |σ|`.
pub fn regime_report(spec: &ValidatedSpec, t0: f64) -> Result<RegimeReport> {
    if !(t0 >= 0.0 && t0.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "t0 must be non-negative and finite (got {t0})"
        )));
    }
    let (lb, lb_source, sigma_bar, transformed) = match spec.diffusion.as_constant() {
        Some(sigma) => {
            let d1 = spec.drift_lipschitz();
            let source = match d1.source {
                BoundSource::Declared => DriftSource::Declared,
                BoundSource::GridEstimated => DriftSource::Grid,
            };
            (d1.value, source, sigma.abs(), false)
        }
        None => {
            if !(spec.sigma_inf > 0.0) || !spec.sigma_constant_sign {
                let (lo, hi) = spec.interval;
                return Err(Error::DegenerateDiffusion {
                    inf_abs: spec.sigma_inf,
                    lo,
                    hi,
                });
            }
            let table = lamperti::build_default_transform(spec)?;
            let y_spec = lamperti::transformed_spec(spec, &table)?;
            let (z_lo, z_hi) = table.range();
            let lb = sup_norm_estimate(&y_spec.drift, 1, z_lo, z_hi, lamperti::SUP_GRID_POINTS);
            let sigma_inf = lamperti::inf_abs_sigma(&spec.diffusion, table.domain());
            (lb, DriftSource::TransformGrid, sigma_inf, true)
        }
    };
    let alpha = spec.alpha;
    let theta_at_t0 = theta(t0, alpha, lb);
    let t0_max = max_horizon(alpha, lb);
    let t_end = t0.min(t0_max.as_f64());
    let lower_bound_curve = if t_end > 0.0 {
        (0..CURVE_POINTS)
            .map(|i| {
                let t = t_end * i as f64 / (CURVE_POINTS - 1) as f64;
                (t, final_lower_bound(t, t_end, alpha, lb, sigma_bar))
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(RegimeReport {
        theta_at_t0,
        admissible: theta_at_t0 < 0.5,
        t0,
        t0_max,
        lower_bound_curve,
        alpha,
        lb,
        lb_source,
        sigma_bar,
        transformed,
    })
}

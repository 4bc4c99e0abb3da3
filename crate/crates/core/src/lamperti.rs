//! Unit-diffusion transform `F(y) = ∫_x^y du/σ(u)` for multiplicative noise.
//!
//! `F` is tabulated by cumulative composite Simpson quadrature on a uniform node grid
//! and interpolated by cubic Hermite polynomials with the exact slopes `1/σ(y_j)`.
//! Since `F` is strictly increasing, `sup_s F(X_s) = F(sup_s X_s)` and `Y = F(X)`
//! solves a perturbed equation with unit diffusion and drift
//! `b̃(z) = b(y)/σ(y) − σ′(y)/2`, `y = F⁻¹(z)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hermite::CubicHermite;
use crate::integrate::{KahanSum, PathState};
use crate::malliavin::DerivativeField;
use crate::model::{uniform_points, Coefficient, ProblemSpec, ValidatedSpec};

pub const DEFAULT_NODES: usize = (1 << 14) + 1;
pub const DEFAULT_TOL: f64 = 1e-10;
/// Width of the default working domain in units of `σ̄√T`.
pub const DOMAIN_WIDTH: f64 = 12.0;
/// Grid size for sup-norm estimates of `b̃′`.
pub const SUP_GRID_POINTS: usize = 1 << 13;

#[derive(Clone, Debug, PartialEq)]
pub struct TransformTable {
    table: CubicHermite,
    sigma: Coefficient,
    /// `+1` for positive σ; `−1` when σ < 0 and the integrand was negated.
    sign: f64,
    anchor: f64,
    tol: f64,
}

/// `∫_a^b f` by Simpson's rule on one panel.
fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
}

/// Grid infimum of `|σ|` over a domain.
pub fn inf_abs_sigma(sigma: &Coefficient, (lo, hi): (f64, f64)) -> f64 {
    uniform_points(lo, hi, SUP_GRID_POINTS)
        .map(|y| sigma.value(y).abs())
        .fold(f64::INFINITY, f64::min)
}

pub fn build_transform(
    sigma: &Coefficient,
    anchor: f64,
    (lo, hi): (f64, f64),
    n_nodes: usize,
    tol: f64,
) -> Result<TransformTable> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidParameter(format!("invalid transform domain [{lo}, {hi}]")));
    }
    if n_nodes < 3 {
        return Err(Error::InvalidParameter("transform needs at least 3 nodes".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive (got {tol})")));
    }
    if !(lo..=hi).contains(&anchor) {
        return Err(Error::DomainTooSmall {
            lo,
            hi,
            detail: format!("anchor {anchor} lies outside"),
        });
    }
    let nodes: Vec<f64> = uniform_points(lo, hi, n_nodes).collect();
    let raw_sigma: Vec<f64> = nodes.iter().map(|&y| sigma.value(y)).collect();
    let inf_abs = raw_sigma.iter().map(|s| s.abs()).fold(f64::INFINITY, f64::min);
    let positive = raw_sigma.iter().all(|&s| s > 0.0);
    let negative = raw_sigma.iter().all(|&s| s < 0.0);
    if !(inf_abs > 0.0) || !(positive || negative) {
        return Err(Error::DegenerateDiffusion { inf_abs, lo, hi });
    }
    let sign = if positive { 1.0 } else { -1.0 };
    let g = |y: f64| 1.0 / (sign * sigma.value(y));

    let mut values = Vec::with_capacity(n_nodes);
    let mut acc = KahanSum::new(0.0);
    values.push(0.0);
    for w in nodes.windows(2) {
        acc.add(simpson(&g, w[0], w[1]));
        values.push(acc.value());
    }
    let slopes: Vec<f64> = raw_sigma.iter().map(|s| 1.0 / (sign * s)).collect();
    let raw = CubicHermite::new(nodes.clone(), values.clone(), slopes.clone())?;
    let offset = raw.eval(anchor, 0);
    let shifted: Vec<f64> = values.iter().map(|v| v - offset).collect();
    let table = CubicHermite::new(nodes, shifted, slopes)?;
    if !table.is_monotone_increasing() {
        return Err(Error::InvalidParameter(
            "transform table is not monotone; increase the node count".into(),
        ));
    }

    // Interpolation check at cell midpoints against a two-panel Simpson reference.
    let mut worst = 0.0f64;
    for j in 0..n_nodes - 1 {
        let (a, b) = (table.nodes()[j], table.nodes()[j + 1]);
        let mid = 0.5 * (a + b);
        let reference = table.values()[j] + simpson(&g, a, 0.5 * (a + mid)) + simpson(&g, 0.5 * (a + mid), mid);
        worst = worst.max((table.eval_in_cell(j, mid, 0) - reference).abs());
    }
    if worst > tol {
        return Err(Error::InvalidParameter(format!(
            "transform interpolation error {worst:.3e} exceeds tolerance {tol:.3e}; increase the node count"
        )));
    }
    Ok(TransformTable {
        table,
        sigma: sigma.clone(),
        sign,
        anchor,
        tol,
    })
}

/// Default working domain: centered at `X_0 = x0/(1−α)`, half-width `12σ̄√T`, with the
/// upper side stretched by `1/(1−α)` for `α > 0` (the max term pushes paths upward).
pub fn default_domain(spec: &ValidatedSpec) -> (f64, f64) {
    let half = DOMAIN_WIDTH * spec.sigma_bar() * spec.horizon.sqrt();
    let center = spec.initial_state();
    let up = if spec.alpha > 0.0 { 1.0 / (1.0 - spec.alpha) } else { 1.0 };
    (center - half, center + half * up)
}

/// Transform of the problem's σ anchored at `x0`, on the default domain.
pub fn build_default_transform(spec: &ValidatedSpec) -> Result<TransformTable> {
    build_transform(&spec.diffusion, spec.x0, default_domain(spec), DEFAULT_NODES, DEFAULT_TOL)
}

impl TransformTable {
    pub fn domain(&self) -> (f64, f64) {
        (self.table.lo(), self.table.hi())
    }

    pub fn range(&self) -> (f64, f64) {
        let v = self.table.values();
        (v[0], v[v.len() - 1])
    }

    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    /// `+1`, or `−1` when σ is negative: the transformed process is then driven by `−B`.
    pub fn noise_sign(&self) -> f64 {
        self.sign
    }

    pub fn nodes(&self) -> &[f64] {
        self.table.nodes()
    }

    pub fn node_values(&self) -> &[f64] {
        self.table.values()
    }

    pub fn forward(&self, y: f64) -> Result<f64> {
        let (lo, hi) = self.domain();
        if !(lo..=hi).contains(&y) {
            return Err(Error::OutOfDomain { value: y, lo, hi });
        }
        Ok(self.table.eval(y, 0))
    }

    /// Bracketed inverse: the cell is located by binary search on node values, then
    /// the cubic is solved by Illinois-safeguarded secant steps.
    pub fn inverse(&self, z: f64) -> Result<f64> {
        let (z_lo, z_hi) = self.range();
        if !(z_lo..=z_hi).contains(&z) {
            return Err(Error::OutOfDomain {
                value: z,
                lo: z_lo,
                hi: z_hi,
            });
        }
        let values = self.table.values();
        let j = values.partition_point(|&v| v <= z).saturating_sub(1).min(values.len() - 2);
        let (mut a, mut b) = (self.table.nodes()[j], self.table.nodes()[j + 1]);
        let f = |y: f64| self.table.eval_in_cell(j, y, 0) - z;
        let (mut fa, mut fb) = (f(a), f(b));
        if fa == 0.0 {
            return Ok(a);
        }
        if fb == 0.0 {
            return Ok(b);
        }
        let target = 1e-3 * self.tol;
        let mut side = 0i8;
        for _ in 0..200 {
            let mut c = b - fb * (b - a) / (fb - fa);
            if !(c > a.min(b) && c < a.max(b)) {
                c = 0.5 * (a + b);
            }
            let fc = f(c);
            if fc.abs() <= target || (b - a).abs() <= 4.0 * f64::EPSILON * c.abs().max(1.0) {
                return Ok(c);
            }
            if (fc < 0.0) == (fa < 0.0) {
                a = c;
                fa = fc;
                if side == -1 {
                    fb *= 0.5;
                }
                side = -1;
            } else {
                b = c;
                fb = fc;
                if side == 1 {
                    fa *= 0.5;
                }
                side = 1;
            }
        }
        Ok(0.5 * (a + b))
    }

    fn sigma_eff(&self, y: f64, order: u8) -> f64 {
        self.sign * self.sigma.eval(y, order)
    }

    /// `b̃` at a point of the original scale.
    fn tilde_b_at(&self, b: &Coefficient, y: f64) -> f64 {
        b.value(y) / self.sigma_eff(y, 0) - 0.5 * self.sigma_eff(y, 1)
    }

    /// `b̃′ = b′ − bσ′/σ − σσ″/2`, evaluated at a point of the original scale.
    fn tilde_b_d1_at(&self, b: &Coefficient, y: f64) -> f64 {
        let s = self.sigma_eff(y, 0);
        b.d1(y) - b.value(y) * self.sigma_eff(y, 1) / s - 0.5 * s * self.sigma_eff(y, 2)
    }

    /// Writes `(y, F(y))` rows.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "y,F")?;
        for (y, f) in self.nodes().iter().zip(self.node_values()) {
            writeln!(w, "{y:.16e},{f:.16e}")?;
        }
        Ok(())
    }
}

/// `b̃(z) = b(F⁻¹(z))/σ(F⁻¹(z)) − σ′(F⁻¹(z))/2`.
pub fn tilde_b(table: &TransformTable, b: &Coefficient, z: f64) -> Result<f64> {
    let y = table.inverse(z)?;
    Ok(table.tilde_b_at(b, y))
}

/// `b̃′(z)` by the chain rule.
pub fn tilde_b_d1(table: &TransformTable, b: &Coefficient, z: f64) -> Result<f64> {
    let y = table.inverse(z)?;
    Ok(table.tilde_b_d1_at(b, y))
}

/// The unit-diffusion problem solved by `Y = F(X)`: drift `b̃` (tabulated on the images
/// of the transform nodes), `σ ≡ 1`, same `α` and horizon. The start `y0` is chosen so
/// that `Y_0 = y0/(1−α) = F(X_0)`; it vanishes when `F` is anchored at `X_0`.
pub fn transformed_spec(spec: &ValidatedSpec, table: &TransformTable) -> Result<ProblemSpec> {
    if table.sigma != spec.diffusion {
        return Err(Error::InvalidParameter(
            "transform was built for a different diffusion coefficient".into(),
        ));
    }
    let y_start = table.forward(spec.initial_state()).map_err(|_| Error::DomainTooSmall {
        lo: table.domain().0,
        hi: table.domain().1,
        detail: format!("initial state {} lies outside", spec.initial_state()),
    })?;
    let ys = table.nodes();
    let values: Vec<f64> = ys.iter().map(|&y| table.tilde_b_at(&spec.drift, y)).collect();
    let slopes: Vec<f64> = ys.iter().map(|&y| table.tilde_b_d1_at(&spec.drift, y)).collect();
    let drift = Coefficient::tabulated(CubicHermite::new(
        table.node_values().to_vec(),
        values,
        slopes,
    )?);
    Ok(ProblemSpec {
        x0: (1.0 - spec.alpha) * y_start,
        alpha: spec.alpha,
        drift,
        diffusion: Coefficient::constant(1.0),
        horizon: spec.horizon,
    })
}

/// `z_k = F(x_k)` along a path.
pub fn map_path(table: &TransformTable, path: &PathState) -> Result<Vec<f64>> {
    path.x.iter().map(|&x| table.forward(x)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LiftCheck {
    /// `‖DX_T‖_H`
    pub x_norm: f64,
    /// `inf|σ|·‖DY_T‖_H`
    pub lifted_y_norm: f64,
    pub violated: bool,
}

/// Checks `‖DX_T‖_H ≥ inf|σ|·‖DY_T‖_H`, allowing the multiplicative slack
/// `‖DX_T‖_H ≥ inf|σ|·‖DY_T‖_H·(1 − slack)`.
pub fn lift_bound_check(
    x_field: &DerivativeField,
    y_field: &DerivativeField,
    inf_sigma: f64,
    slack: f64,
) -> Result<LiftCheck> {
    if x_field.n_steps() != y_field.n_steps()
        || (x_field.dt - y_field.dt).abs() > 1e-12 * x_field.dt
    {
        return Err(Error::GridMismatch(format!(
            "X field has {} steps of {}, Y field {} steps of {}",
            x_field.n_steps(),
            x_field.dt,
            y_field.n_steps(),
            y_field.dt
        )));
    }
    let x_norm = x_field.h_norm_sq_final().sqrt();
    let lifted_y_norm = inf_sigma * y_field.h_norm_sq_final().sqrt();
    Ok(LiftCheck {
        x_norm,
        lifted_y_norm,
        violated: x_norm < lifted_y_norm * (1.0 - slack),
    })
}

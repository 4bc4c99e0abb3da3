//! Pathwise Malliavin derivatives of the discretized equation.
//!
//! Entry `i` of a derivative field is the sensitivity of the state to the Brownian
//! increment on `[r_i, r_{i+1})`, normalized by `dt`. It is born at step `i → i+1`
//! from the source term `σ(x_i)` and then follows the linearized scheme:
//!
//! ```text
//! g        = D_i X_k · (b′(x_k) dt + σ′(x_k) db_k)        (+ σ(x_k) when i = k)
//! new max:   D_i X_{k+1} = (D_i X_k + g − α·D_i M_k)/(1−α),  D_i M_{k+1} = D_i X_{k+1}
//! otherwise: D_i X_{k+1} =  D_i X_k + g,                     D_i M_{k+1} = D_i M_k
//! ```
//!
//! so `D_r M` is the derivative frozen at the first-attainment argmax and entries with
//! `r_i ≥ t_k` stay exactly zero.

use rayon::prelude::*;
use serde::Serialize;

use crate::bounds;
use crate::error::{Error, Result};
use crate::integrate::{euler_path, PathState};
use crate::model::{GridSpec, ValidatedSpec};
use crate::noise::NoiseBlock;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DerivativeField {
    /// `D_{r_i} X_T`, `i = 0..n`.
    pub d_x: Vec<f64>,
    /// `D_{r_i} M_T`.
    pub d_m: Vec<f64>,
    /// `‖DX_{t_k}‖²_H`, `k = 0..=n`.
    pub h_norm_sq_by_time: Vec<f64>,
    /// `max_k ‖DX_{t_k}‖²_H`.
    pub sup_h_norm_sq: f64,
    pub dt: f64,
    /// Argmax index of the running maximum at the final time.
    pub argmax_idx: usize,
    /// `D_{r_i} X_{t_k}` for every `k` (row `k` has `n` entries), when requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshots: Option<Vec<Vec<f64>>>,
}

impl DerivativeField {
    pub fn n_steps(&self) -> usize {
        self.d_x.len()
    }

    /// `‖DX_T‖²_H`
    pub fn h_norm_sq_final(&self) -> f64 {
        self.h_norm_sq_by_time[self.n_steps()]
    }

    /// `‖DM_T‖²_H`
    pub fn m_norm_sq(&self) -> f64 {
        h_norm_sq(&self.d_m, self.dt, self.n_steps())
    }

    /// `max_{j≤k} ‖DX_{t_j}‖²_H` for every `k`.
    pub fn running_sup(&self) -> Vec<f64> {
        let mut top = 0.0f64;
        self.h_norm_sq_by_time
            .iter()
            .map(|&v| {
                top = top.max(v);
                top
            })
            .collect()
    }

    /// `⟨DX_T, h⟩_H = Σ_i D_{r_i}X_T · h(r_i) · dt`
    pub fn inner_product(&self, h: &[f64]) -> f64 {
        self.d_x.iter().zip(h).map(|(d, hv)| d * hv).sum::<f64>() * self.dt
    }
}

/// Left Riemann sum `Σ_{r_i < t_k} |d_x[i]|²·dt`.
pub fn h_norm_sq(d_x: &[f64], dt: f64, k: usize) -> f64 {
    d_x[..k.min(d_x.len())].iter().fold(0.0, |acc, d| acc + d * d) * dt
}

/// Propagates the derivative field along a path produced by [`euler_path`] on `grid`.
/// O(n) memory and O(n²) time; `track_all_times` additionally stores the whole field
/// at every time (O(n²) memory).
pub fn propagate_derivative(
    path: &PathState,
    spec: &ValidatedSpec,
    grid: &GridSpec,
    track_all_times: bool,
) -> Result<DerivativeField> {
    let n = grid.n_steps;
    if path.x.len() != n + 1 || path.db.len() != n || path.argmax_idx.len() != n + 1 {
        return Err(Error::GridMismatch(format!(
            "path has {} states, grid has {} steps",
            path.x.len(),
            n
        )));
    }
    if (path.dt - grid.dt()).abs() > 1e-12 * grid.dt() {
        return Err(Error::GridMismatch(format!(
            "path dt {} differs from grid dt {}",
            path.dt,
            grid.dt()
        )));
    }
    let dt = grid.dt();
    let alpha = spec.alpha;
    let inv = 1.0 / (1.0 - alpha);

    let mut d_x = vec![0.0; n];
    let mut d_m = vec![0.0; n];
    let mut norms = Vec::with_capacity(n + 1);
    norms.push(0.0);
    let mut snapshots = track_all_times.then(|| {
        let mut rows = Vec::with_capacity(n + 1);
        rows.push(vec![0.0; n]);
        rows
    });

    for k in 0..n {
        let xk = path.x[k];
        let factor = 1.0 + spec.drift.d1(xk) * dt + spec.diffusion.d1(xk) * path.db[k];
        let source = spec.diffusion.value(xk);
        let new_max = path.is_new_max(k + 1);
        let mut sq = 0.0;
        if new_max {
            for (dx, dm) in d_x[..k].iter_mut().zip(&mut d_m[..k]) {
                let v = (*dx * factor - alpha * *dm) * inv;
                *dx = v;
                *dm = v;
                sq += v * v;
            }
            let v = source * inv;
            d_x[k] = v;
            d_m[k] = v;
            sq += v * v;
        } else {
            for dx in &mut d_x[..k] {
                let v = *dx * factor;
                *dx = v;
                sq += v * v;
            }
            d_x[k] = source;
            sq += source * source;
        }
        norms.push(sq * dt);
        if let Some(rows) = snapshots.as_mut() {
            rows.push(d_x.clone());
        }
    }
    if d_x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            step: n,
            path: path.noise_id.map(|id| id.path_index),
        });
    }
    let sup_h_norm_sq = norms.iter().copied().fold(0.0, f64::max);
    Ok(DerivativeField {
        d_x,
        d_m,
        h_norm_sq_by_time: norms,
        sup_h_norm_sq,
        dt,
        argmax_idx: path.argmax_idx[n],
        snapshots,
    })
}

/// `max_k ‖DX_{t_k}‖²_H` along the path.
pub fn sup_h_norm_sq(path: &PathState, spec: &ValidatedSpec, grid: &GridSpec) -> Result<f64> {
    Ok(propagate_derivative(path, spec, grid, false)?.sup_h_norm_sq)
}

/// Directional derivative of `X_T` along the Cameron-Martin shift `∫h`, by forward
/// differences: simulates with increments `db_k + eps·h(t_k)·dt` and returns
/// `(X^ε_T − X_T)/eps`.
pub fn cameron_martin_fd(
    spec: &ValidatedSpec,
    grid: &GridSpec,
    noise: &NoiseBlock,
    h: &[f64],
    eps: f64,
) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be positive (got {eps})")));
    }
    if h.len() != grid.n_steps {
        return Err(Error::GridMismatch(format!(
            "direction has {} entries, grid has {} steps",
            h.len(),
            grid.n_steps
        )));
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("direction h must be finite".into()));
    }
    let base = euler_path(spec, grid, noise)?.terminal();
    let bumped = euler_path(spec, grid, &noise.shifted(eps, h))?.terminal();
    let d = (bumped - base) / eps;
    if !d.is_finite() {
        return Err(Error::NonFinite {
            step: grid.n_steps,
            path: noise.id().map(|id| id.path_index),
        });
    }
    Ok(d)
}

// ---------------------------------------------------------------------------
// Bound verification

/// Outcome of checking one bound along one path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundCheck {
    /// Number of grid times where the bound failed beyond the slack.
    pub violations: usize,
    pub checked: usize,
    /// Smallest observed `lhs / bound` over checked times with a positive bound.
    pub worst_ratio: f64,
}

impl Default for BoundCheck {
    fn default() -> Self {
        Self::new()
    }
}

impl BoundCheck {
    fn new() -> Self {
        Self {
            violations: 0,
            checked: 0,
            worst_ratio: f64::INFINITY,
        }
    }

    fn record_lower(&mut self, lhs: f64, bound: f64, slack: f64) {
        self.checked += 1;
        if bound > 0.0 {
            self.worst_ratio = self.worst_ratio.min(lhs / bound);
        }
        if lhs < bound * (1.0 - slack) {
            self.violations += 1;
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            violations: self.violations + other.violations,
            checked: self.checked + other.checked,
            worst_ratio: self.worst_ratio.min(other.worst_ratio),
        }
    }
}

/// Parameters of the constant-σ bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundParams {
    pub alpha: f64,
    /// `‖b′‖_∞`
    pub lb: f64,
    /// `|σ|`
    pub sigma_bar: f64,
    /// Multiplicative slack: a bound `B` counts as violated only below `B·(1 − slack)`.
    pub slack: f64,
}

/// `max_{s ≤ t_k} ‖DX_s‖²_H ≥ sup_lower_bound(t_k)` at every grid time.
pub fn check_sup_lower_bound(field: &DerivativeField, p: &BoundParams) -> BoundCheck {
    let mut check = BoundCheck::new();
    for (k, top) in field.running_sup().into_iter().enumerate() {
        let t = k as f64 * field.dt;
        check.record_lower(top, bounds::sup_lower_bound(t, p.alpha, p.lb, p.sigma_bar), p.slack);
    }
    check
}

/// `‖DX_{t_k}‖²_H ≥ final_lower_bound(t_k, t0)` at every grid time `t_k ≤ t0`.
pub fn check_final_lower_bound(field: &DerivativeField, t0: f64, p: &BoundParams) -> BoundCheck {
    let mut check = BoundCheck::new();
    for (k, &norm) in field.h_norm_sq_by_time.iter().enumerate() {
        let t = k as f64 * field.dt;
        if t > t0 * (1.0 + 1e-12) {
            break;
        }
        let bound = bounds::final_lower_bound(t, t0, p.alpha, p.lb, p.sigma_bar);
        check.record_lower(norm, bound, p.slack);
    }
    check
}

/// `|‖DX_{t2}‖² − ‖DX_{t1}‖²| ≤ diff_bound(t1, t2)` for the given index pairs, with the
/// per-path sup of `‖DX_s‖²` over the whole horizon. A pair fails only when the
/// difference exceeds the bound times `1 + slack`.
pub fn check_difference_bound(
    field: &DerivativeField,
    pairs: &[(usize, usize)],
    p: &BoundParams,
) -> BoundCheck {
    let mut check = BoundCheck::new();
    let sup = field.sup_h_norm_sq;
    for &(k1, k2) in pairs {
        let (k1, k2) = if k1 <= k2 { (k1, k2) } else { (k2, k1) };
        let (t1, t2) = (k1 as f64 * field.dt, k2 as f64 * field.dt);
        let lhs = (field.h_norm_sq_by_time[k2] - field.h_norm_sq_by_time[k1]).abs();
        let bound = bounds::diff_bound(t1, t2, p.alpha, p.lb, sup);
        check.checked += 1;
        if lhs > 0.0 {
            check.worst_ratio = check.worst_ratio.min(bound / lhs);
        }
        if lhs > bound * (1.0 + p.slack) {
            check.violations += 1;
        }
    }
    check
}

/// Derivative fields of many paths, computed in parallel. Results are ordered by
/// path index and independent of the worker count.
pub fn ensemble_fields(
    spec: &ValidatedSpec,
    grid: &GridSpec,
    seed: u64,
    path_indices: std::ops::Range<u64>,
) -> Result<Vec<(PathState, DerivativeField)>> {
    path_indices
        .into_par_iter()
        .map(|p| {
            let noise = NoiseBlock::generate(seed, p, grid);
            let path = euler_path(spec, grid, &noise)?;
            let field = propagate_derivative(&path, spec, grid, false)?;
            Ok((path, field))
        })
        .collect()
}

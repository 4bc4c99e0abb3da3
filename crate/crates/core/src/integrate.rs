//! Path simulation.
//!
//! Drift and diffusion are frozen at the left endpoint of each step (explicit Euler);
//! the `α·max` term is resolved implicitly and exactly at every step. Writing
//! `A_{k+1} = x0 + Σ_{j≤k} b(x_j)dt + Σ_{j≤k} σ(x_j)db_j`, the next state is the unique
//! solution of `x = A_{k+1} + α·max(M_k, x)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{GridSpec, ProblemSpec, ValidatedSpec};
use crate::noise::{NoiseBlock, NoiseId};

/// Solves `x = a + α·max(m_prev, x)` for `α < 1`. Returns `(x, is_new_max)`.
///
/// The branch `x ≤ m_prev` gives `x = a + α·m_prev` and is valid iff
/// `a + α·m_prev ≤ m_prev`; otherwise `x = a/(1−α) > m_prev`. At equality both
/// branches coincide and the old maximum is kept.
#[inline]
pub fn resolve_step(a: f64, m_prev: f64, alpha: f64) -> (f64, bool) {
    let stay = a + alpha * m_prev;
    if stay <= m_prev {
        (stay, false)
    } else {
        (a / (1.0 - alpha), true)
    }
}

/// Compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub(crate) fn new(start: f64) -> Self {
        Self {
            sum: start,
            comp: 0.0,
        }
    }

    #[inline]
    pub(crate) fn add(&mut self, v: f64) {
        let y = v - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    #[inline]
    pub(crate) fn value(&self) -> f64 {
        self.sum
    }
}

/// One discretized trajectory.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathState {
    pub x: Vec<f64>,
    /// `M_k = max_{j≤k} x_j`
    pub running_max: Vec<f64>,
    /// First index attaining `M_k`.
    pub argmax_idx: Vec<usize>,
    pub db: Vec<f64>,
    pub dt: f64,
    pub noise_id: Option<NoiseId>,
}

impl PathState {
    /// Builds running max and first-attainment argmax from the values.
    pub fn from_values(x: Vec<f64>, noise: &NoiseBlock) -> Self {
        let mut running_max = Vec::with_capacity(x.len());
        let mut argmax_idx = Vec::with_capacity(x.len());
        let (mut m, mut arg) = (f64::NEG_INFINITY, 0);
        for (k, &v) in x.iter().enumerate() {
            if v > m {
                m = v;
                arg = k;
            }
            running_max.push(m);
            argmax_idx.push(arg);
        }
        Self {
            x,
            running_max,
            argmax_idx,
            db: noise.db().to_vec(),
            dt: noise.dt(),
            noise_id: noise.id(),
        }
    }

    pub fn n_steps(&self) -> usize {
        self.x.len() - 1
    }

    pub fn terminal(&self) -> f64 {
        self.x[self.x.len() - 1]
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// Whether step `k` sets a new running maximum.
    #[inline]
    pub fn is_new_max(&self, k: usize) -> bool {
        self.argmax_idx[k] == k
    }
}

fn check_noise(grid: &GridSpec, noise: &NoiseBlock) -> Result<()> {
    if noise.len() != grid.n_steps {
        return Err(Error::GridMismatch(format!(
            "noise has {} increments, grid has {} steps",
            noise.len(),
            grid.n_steps
        )));
    }
    if (noise.dt() - grid.dt()).abs() > 1e-12 * grid.dt() {
        return Err(Error::GridMismatch(format!(
            "noise dt {} differs from grid dt {}",
            noise.dt(),
            grid.dt()
        )));
    }
    Ok(())
}

fn non_finite(step: usize, noise: &NoiseBlock) -> Error {
    Error::NonFinite {
        step,
        path: noise.id().map(|id| id.path_index),
    }
}

/// Euler scheme with implicit per-step resolution of the running-max term.
pub fn euler_path(spec: &ValidatedSpec, grid: &GridSpec, noise: &NoiseBlock) -> Result<PathState> {
    euler_path_unchecked(spec, grid, noise)
}

/// [`euler_path`] for a spec that has not gone through validation. `alpha < 1` is
/// still enforced.
pub fn euler_path_unchecked(
    spec: &ProblemSpec,
    grid: &GridSpec,
    noise: &NoiseBlock,
) -> Result<PathState> {
    if !(spec.alpha < 1.0) {
        return Err(Error::AlphaOutOfRange(spec.alpha));
    }
    check_noise(grid, noise)?;
    let n = grid.n_steps;
    let dt = grid.dt();
    let alpha = spec.alpha;

    let mut x = Vec::with_capacity(n + 1);
    let mut running_max = Vec::with_capacity(n + 1);
    let mut argmax_idx = Vec::with_capacity(n + 1);

    let x_start = spec.initial_state();
    if !x_start.is_finite() {
        return Err(non_finite(0, noise));
    }
    x.push(x_start);
    running_max.push(x_start);
    argmax_idx.push(0);

    let mut acc = KahanSum::new(spec.x0);
    let (mut xk, mut m, mut arg) = (x_start, x_start, 0usize);
    for (k, &db) in noise.db().iter().enumerate() {
        acc.add(spec.drift.value(xk) * dt + spec.diffusion.value(xk) * db);
        let (next, new_max) = resolve_step(acc.value(), m, alpha);
        if !next.is_finite() {
            return Err(non_finite(k + 1, noise));
        }
        if new_max {
            m = next;
            arg = k + 1;
        }
        xk = next;
        x.push(next);
        running_max.push(m);
        argmax_idx.push(arg);
    }
    Ok(PathState {
        x,
        running_max,
        argmax_idx,
        db: noise.db().to_vec(),
        dt,
        noise_id: noise.id(),
    })
}

/// Terminal value of [`euler_path`] without storing the trajectory. Arithmetic is
/// identical, so results agree bitwise.
pub fn euler_terminal(spec: &ProblemSpec, grid: &GridSpec, noise: &NoiseBlock) -> Result<f64> {
    if !(spec.alpha < 1.0) {
        return Err(Error::AlphaOutOfRange(spec.alpha));
    }
    check_noise(grid, noise)?;
    let dt = grid.dt();
    let x_start = spec.initial_state();
    let mut acc = KahanSum::new(spec.x0);
    let (mut xk, mut m) = (x_start, x_start);
    for (k, &db) in noise.db().iter().enumerate() {
        acc.add(spec.drift.value(xk) * dt + spec.diffusion.value(xk) * db);
        let (next, new_max) = resolve_step(acc.value(), m, spec.alpha);
        if !next.is_finite() {
            return Err(non_finite(k + 1, noise));
        }
        if new_max {
            m = next;
        }
        xk = next;
    }
    if !xk.is_finite() {
        return Err(non_finite(0, noise));
    }
    Ok(xk)
}

/// Closed-form solution for `b ≡ 0`, constant `σ`:
/// `x_k = x0/(1−α) + σB_k + (α/(1−α))·σ·max_{j≤k} B_j`.
pub fn explicit_additive_path(x0: f64, alpha: f64, sigma: f64, noise: &NoiseBlock) -> PathState {
    let lift = alpha / (1.0 - alpha);
    let start = x0 / (1.0 - alpha);
    let mut acc = KahanSum::new(0.0);
    let mut top = 0.0f64;
    let mut x = Vec::with_capacity(noise.len() + 1);
    x.push(start);
    for &db in noise.db() {
        acc.add(db);
        let b = acc.value();
        top = top.max(b);
        x.push(start + sigma * b + lift * sigma * top);
    }
    PathState::from_values(x, noise)
}

#[derive(Clone, Debug)]
pub struct PicardOutcome {
    pub path: PathState,
    /// `sup_k |X^{n+1}_k − X^n_k|` for each iteration performed.
    pub sup_diffs: Vec<f64>,
    pub converged: bool,
}

impl PicardOutcome {
    pub fn iterations(&self) -> usize {
        self.sup_diffs.len()
    }

    /// Turns a non-converged outcome into [`Error::NoConvergence`].
    pub fn require_converged(self, tol: f64) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NoConvergence {
                iterations: self.sup_diffs.len(),
                tol,
                last: self.sup_diffs.last().copied().unwrap_or(f64::INFINITY),
            })
        }
    }
}

/// Picard iteration on the grid, starting from `X⁰ ≡ x0`. Each iterate uses the
/// resolved representation
/// `X^{n+1}_k = x0/(1−α) + Z^n_k + (α/(1−α))·max_{j≤k} Z^n_j`,
/// `Z^n_k = Σ_{j<k} σ(X^n_j)db_j + b(X^n_j)dt`. Stops once the sup-difference of
/// consecutive iterates drops below `tol`.
pub fn picard_solve(
    spec: &ValidatedSpec,
    grid: &GridSpec,
    noise: &NoiseBlock,
    n_iter: usize,
    tol: f64,
) -> Result<PicardOutcome> {
    if n_iter == 0 {
        return Err(Error::InvalidParameter("n_iter must be at least 1".into()));
    }
    check_noise(grid, noise)?;
    let dt = grid.dt();
    let lift = spec.alpha / (1.0 - spec.alpha);
    let start = spec.initial_state();

    let mut current = vec![spec.x0; grid.n_steps + 1];
    let mut next = vec![0.0; grid.n_steps + 1];
    let mut sup_diffs = Vec::new();
    let mut converged = false;
    for _ in 0..n_iter {
        let mut z = KahanSum::new(0.0);
        let mut top = 0.0f64;
        next[0] = start;
        for (k, &db) in noise.db().iter().enumerate() {
            let xk = current[k];
            z.add(spec.drift.value(xk) * dt + spec.diffusion.value(xk) * db);
            top = top.max(z.value());
            let v = start + z.value() + lift * top;
            if !v.is_finite() {
                return Err(non_finite(k + 1, noise));
            }
            next[k + 1] = v;
        }
        let diff = current
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        sup_diffs.push(diff);
        std::mem::swap(&mut current, &mut next);
        if diff < tol {
            converged = true;
            break;
        }
    }
    Ok(PicardOutcome {
        path: PathState::from_values(current, noise),
        sup_diffs,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate, Coefficient};
    use proptest::prelude::*;

    fn additive(alpha: f64, sigma: f64, horizon: f64) -> ValidatedSpec {
        validate(&ProblemSpec {
            x0: 0.0,
            alpha,
            drift: Coefficient::constant(0.0),
            diffusion: Coefficient::constant(sigma),
            horizon,
        })
        .unwrap()
    }

    #[test]
    fn resolve_step_examples() {
        assert_eq!(resolve_step(1.0, 2.0, 0.0), (1.0, false));
        assert_eq!(resolve_step(2.0, 1.0, 0.5), (4.0, true));
        assert_eq!(resolve_step(0.5, 2.0, 0.5), (1.5, false));
        // tie: a + α·m = m
        assert_eq!(resolve_step(1.0, 2.0, 0.5), (2.0, false));
    }

    #[test]
    fn explicit_examples() {
        let noise = NoiseBlock::from_brownian_values(&[0.0, 1.0, 0.5], 0.5);
        assert_eq!(explicit_additive_path(0.0, 0.5, 1.0, &noise).x, vec![0.0, 2.0, 1.5]);
        assert_eq!(explicit_additive_path(0.0, -1.0, 1.0, &noise).x, vec![0.0, 0.5, 0.0]);
        let p = explicit_additive_path(0.3, 0.0, 2.0, &noise);
        assert_eq!(p.x, vec![0.3, 2.3, 1.3]);
    }

    #[test]
    fn euler_matches_explicit_on_hand_example() {
        let spec = additive(0.5, 1.0, 1.0);
        let grid = GridSpec::new(1.0, 2).unwrap();
        let noise = NoiseBlock::from_brownian_values(&[0.0, 1.0, 0.5], 0.5);
        let p = euler_path(&spec, &grid, &noise).unwrap();
        assert_eq!(p.x, vec![0.0, 2.0, 1.5]);
        assert_eq!(p.running_max, vec![0.0, 2.0, 2.0]);
        assert_eq!(p.argmax_idx, vec![0, 1, 1]);
    }

    #[test]
    fn initial_state_solves_the_time_zero_equation() {
        let spec = ProblemSpec {
            x0: 1.5,
            ..additive(0.25, 1.0, 1.0).spec
        };
        let grid = GridSpec::new(1.0, 4).unwrap();
        let p = euler_path_unchecked(&spec, &grid, &NoiseBlock::generate(0, 0, &grid)).unwrap();
        assert!((p.x[0] - (1.5 + 0.25 * p.x[0])).abs() < 1e-15);
    }

    #[test]
    fn non_finite_reports_the_step() {
        let spec = ProblemSpec {
            x0: 1.0,
            alpha: 0.0,
            drift: Coefficient::linear(1e300, 0.0),
            diffusion: Coefficient::constant(0.0),
            horizon: 1.0,
        };
        let grid = GridSpec::new(1.0, 10).unwrap();
        let err = euler_path_unchecked(&spec, &grid, &NoiseBlock::generate(0, 4, &grid)).unwrap_err();
        assert_eq!(err, Error::NonFinite { step: 2, path: Some(4) });
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let spec = additive(0.0, 1.0, 1.0);
        let grid = GridSpec::new(1.0, 10).unwrap();
        let other = GridSpec::new(1.0, 11).unwrap();
        assert!(matches!(
            euler_path(&spec, &grid, &NoiseBlock::generate(0, 0, &other)),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn terminal_matches_full_path_bitwise() {
        let spec = validate(&ProblemSpec {
            x0: 0.2,
            alpha: 0.4,
            drift: Coefficient::sine(0.5, 0.0),
            diffusion: Coefficient::sine(0.5, 1.5),
            horizon: 1.0,
        })
        .unwrap();
        let grid = GridSpec::new(1.0, 500).unwrap();
        for p in 0..5 {
            let noise = NoiseBlock::generate(9, p, &grid);
            let full = euler_path(&spec, &grid, &noise).unwrap();
            let term = euler_terminal(&spec, &grid, &noise).unwrap();
            assert_eq!(full.terminal().to_bits(), term.to_bits());
        }
    }

    #[test]
    fn running_max_invariants_hold() {
        let spec = validate(&ProblemSpec {
            x0: -0.3,
            alpha: -0.7,
            drift: Coefficient::tanh(0.3),
            diffusion: Coefficient::sine(0.3, 1.0),
            horizon: 2.0,
        })
        .unwrap();
        let grid = GridSpec::new(2.0, 400).unwrap();
        let p = euler_path(&spec, &grid, &NoiseBlock::generate(3, 1, &grid)).unwrap();
        assert_eq!(p.running_max[0], p.x[0]);
        for k in 1..p.x.len() {
            assert_eq!(p.running_max[k], p.running_max[k - 1].max(p.x[k]));
            assert!(p.x[k] <= p.running_max[k]);
            let first = p.x[..=k].iter().position(|&v| v == p.running_max[k]).unwrap();
            assert_eq!(p.argmax_idx[k], first);
        }
    }

    #[test]
    fn picard_one_step_fixed_point_for_additive_noise() {
        let spec = additive(0.3, 1.5, 1.0);
        let grid = GridSpec::new(1.0, 200).unwrap();
        let noise = NoiseBlock::generate(5, 0, &grid);
        let out = picard_solve(&spec, &grid, &noise, 5, 1e-14).unwrap();
        assert!(out.converged);
        assert_eq!(out.sup_diffs.len(), 2);
        assert_eq!(out.sup_diffs[1], 0.0);
        let exact = explicit_additive_path(0.0, 0.3, 1.5, &noise);
        for (a, b) in out.path.x.iter().zip(&exact.x) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn picard_with_zero_alpha_converges_to_euler() {
        let spec = validate(&ProblemSpec {
            x0: 0.5,
            alpha: 0.0,
            drift: Coefficient::sine(1.0, 0.0),
            diffusion: Coefficient::constant(1.0),
            horizon: 1.0,
        })
        .unwrap();
        let grid = GridSpec::new(1.0, 300).unwrap();
        let noise = NoiseBlock::generate(5, 2, &grid);
        let out = picard_solve(&spec, &grid, &noise, 40, 1e-12).unwrap();
        assert!(out.converged, "{:?}", out.sup_diffs);
        // superlinear decay once the Volterra structure kicks in
        let d = &out.sup_diffs;
        assert!(d[d.len() - 2] < 1e-3 * d[1]);
        let euler = euler_path(&spec, &grid, &noise).unwrap();
        let gap = euler.x.iter().zip(&out.path.x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(gap < 1e-11);
    }

    #[test]
    fn picard_reports_non_convergence() {
        let spec = validate(&ProblemSpec {
            x0: 0.0,
            alpha: 0.2,
            drift: Coefficient::sine(1.0, 0.0),
            diffusion: Coefficient::sine(0.5, 1.0),
            horizon: 1.0,
        })
        .unwrap();
        let grid = GridSpec::new(1.0, 100).unwrap();
        let out = picard_solve(&spec, &grid, &NoiseBlock::generate(0, 0, &grid), 2, 1e-14).unwrap();
        assert!(!out.converged);
        assert!(matches!(out.require_converged(1e-14), Err(Error::NoConvergence { iterations: 2, .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]
        #[test]
        fn resolve_step_solves_the_scalar_equation(a in -1e3f64..1e3, m in -1e3f64..1e3, alpha in -5.0f64..0.999) {
            let (x, new_max) = resolve_step(a, m, alpha);
            let residual = (x - a - alpha * m.max(x)).abs();
            let scale = a.abs().max(m.abs()).max(x.abs()).max(1.0);
            prop_assert!(residual <= 4.0 * f64::EPSILON * scale * (1.0 + alpha.abs()) / (1.0 - alpha));
            // the rejected branch is invalid, up to rounding at the boundary
            if new_max {
                prop_assert!(a + alpha * m > m);
            } else {
                prop_assert!(a / (1.0 - alpha) <= m + 4.0 * f64::EPSILON * scale / (1.0 - alpha));
            }
        }

        #[test]
        fn additive_paths_are_monotone_in_alpha(seed in 0u64..1000, a1 in -2.0f64..0.95, a2 in -2.0f64..0.95) {
            let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
            let grid = GridSpec::new(1.0, 64).unwrap();
            let noise = NoiseBlock::generate(seed, 0, &grid);
            let p_lo = explicit_additive_path(0.0, lo, 1.0, &noise);
            let p_hi = explicit_additive_path(0.0, hi, 1.0, &noise);
            for (x_lo, x_hi) in p_lo.x.iter().zip(&p_hi.x) {
                prop_assert!(x_lo <= x_hi);
            }
        }
    }
}

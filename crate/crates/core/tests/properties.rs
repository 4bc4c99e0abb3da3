//! Property tests over the public API.

use pdlab::bounds::{self, Horizon};
use pdlab::density::{kde, trapezoid, Bandwidth};
use pdlab::integrate::{euler_path, explicit_additive_path, picard_solve};
use pdlab::malliavin::propagate_derivative;
use pdlab::model::validate;
use pdlab::noise::standard_normal_at;
use pdlab::{Coefficient, GridSpec, NoiseBlock, ProblemSpec, ValidatedSpec};
use proptest::prelude::*;

fn spec(x0: f64, alpha: f64, drift: Coefficient, diffusion: Coefficient) -> ValidatedSpec {
    validate(&ProblemSpec {
        x0,
        alpha,
        drift,
        diffusion,
        horizon: 1.0,
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn noise_is_a_pure_function_of_seed_path_and_step(seed in any::<u64>(), path in 0u64..1 << 40, n in 1usize..300) {
        let grid = GridSpec::new(1.0, n).unwrap();
        let a = NoiseBlock::generate(seed, path, &grid);
        let b = NoiseBlock::generate(seed, path, &grid);
        prop_assert_eq!(a.len(), n);
        prop_assert_eq!(&a, &b);
        let scale = grid.dt().sqrt();
        for k in [0, n / 2, n - 1] {
            prop_assert_eq!(a.db()[k].to_bits(), (standard_normal_at(seed, path, k as u64) * scale).to_bits());
        }
    }

    #[test]
    fn running_max_bookkeeping(seed in any::<u64>(), alpha in -2.0f64..0.95, amp in 0.0f64..1.0, x0 in -1.0f64..1.0) {
        let s = spec(x0, alpha, Coefficient::tanh(amp), Coefficient::sine(0.5, 1.5));
        let grid = GridSpec::new(1.0, 300).unwrap();
        let path = euler_path(&s, &grid, &NoiseBlock::generate(seed, 0, &grid)).unwrap();
        prop_assert_eq!(path.x[0], x0 / (1.0 - alpha));
        prop_assert_eq!(path.running_max[0], path.x[0]);
        for k in 1..path.x.len() {
            prop_assert_eq!(path.running_max[k], path.running_max[k - 1].max(path.x[k]));
            let arg = path.argmax_idx[k];
            prop_assert_eq!(path.x[arg], path.running_max[k]);
            prop_assert!(path.x[..arg].iter().all(|&v| v < path.running_max[k]));
        }
    }

    #[test]
    fn additive_identity_holds_for_any_alpha(seed in any::<u64>(), alpha in -3.0f64..0.95, sigma in 0.1f64..3.0, x0 in -2.0f64..2.0) {
        let s = spec(x0, alpha, Coefficient::constant(0.0), Coefficient::constant(sigma));
        let grid = GridSpec::new(1.0, 500).unwrap();
        let noise = NoiseBlock::generate(seed, 1, &grid);
        let a = euler_path(&s, &grid, &noise).unwrap();
        let b = explicit_additive_path(x0, alpha, sigma, &noise);
        let scale = 1.0 + x0.abs() / (1.0 - alpha);
        for (u, v) in a.x.iter().zip(&b.x) {
            prop_assert!((u - v).abs() <= 1e-12 * scale, "{} vs {}", u, v);
        }
    }

    #[test]
    fn paths_are_monotone_in_alpha(seed in any::<u64>(), a1 in -2.0f64..0.9, gap in 0.0f64..0.09) {
        let grid = GridSpec::new(1.0, 400).unwrap();
        let noise = NoiseBlock::generate(seed, 0, &grid);
        let lo = euler_path(&spec(0.0, a1, Coefficient::constant(0.0), Coefficient::constant(1.0)), &grid, &noise).unwrap();
        let hi = euler_path(&spec(0.0, a1 + gap, Coefficient::constant(0.0), Coefficient::constant(1.0)), &grid, &noise).unwrap();
        for (l, h) in lo.x.iter().zip(&hi.x) {
            prop_assert!(h - l >= -1e-12);
        }
    }

    #[test]
    fn derivative_field_respects_the_sup_inequality(seed in any::<u64>(), alpha in -1.0f64..0.9, amp in 0.0f64..0.5) {
        let s = spec(0.3, alpha, Coefficient::sine(amp, 0.0), Coefficient::sine(0.3, 1.0));
        let grid = GridSpec::new(1.0, 200).unwrap();
        let path = euler_path(&s, &grid, &NoiseBlock::generate(seed, 2, &grid)).unwrap();
        let f = propagate_derivative(&path, &s, &grid, true).unwrap();
        prop_assert!(f.m_norm_sq() <= f.sup_h_norm_sq * (1.0 + 1e-12));
        prop_assert!(f.sup_h_norm_sq >= f.h_norm_sq_final());
        let rows = f.snapshots.as_ref().unwrap();
        for (k, row) in rows.iter().enumerate() {
            prop_assert!(row[k..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn picard_limit_matches_euler(seed in any::<u64>(), alpha in -0.5f64..0.5, amp in 0.0f64..0.5) {
        let s = spec(0.0, alpha, Coefficient::tanh(amp), Coefficient::sine(0.5, 2.0));
        let grid = GridSpec::new(1.0, 200).unwrap();
        let noise = NoiseBlock::generate(seed, 0, &grid);
        let tol = 1e-9;
        let out = picard_solve(&s, &grid, &noise, 60, tol).unwrap().require_converged(tol).unwrap();
        let euler = euler_path(&s, &grid, &noise).unwrap();
        let diff = out.path.x.iter().zip(&euler.x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(diff <= 10.0 * tol, "{}", diff);
    }

    #[test]
    fn max_horizon_solves_theta_equals_half(alpha in -0.14f64..0.14, lb in 0.01f64..10.0) {
        match bounds::max_horizon(alpha, lb) {
            Horizon::Finite(t) => {
                prop_assert!(t > 0.0);
                prop_assert!((bounds::theta(t, alpha, lb) - 0.5).abs() <= 1e-10);
            }
            other => prop_assert!(false, "unexpected {:?}", other),
        }
    }

    #[test]
    fn final_bound_never_exceeds_sup_bound(t in 0.0f64..3.0, frac in 0.0f64..1.0, alpha in -0.9f64..0.9, lb in 0.0f64..2.0) {
        let t0 = t.max(1e-9);
        let tt = frac * t0;
        let fin = bounds::final_lower_bound(tt, t0, alpha, lb, 1.0);
        let sup = bounds::sup_lower_bound(tt, alpha, lb, 1.0);
        prop_assert!(fin <= sup * (1.0 + 1e-15));
    }

    #[test]
    fn kde_is_nonnegative_and_normalized(seed in any::<u64>(), alpha in -1.0f64..0.8) {
        let s = spec(0.0, alpha, Coefficient::tanh(0.2), Coefficient::constant(1.0));
        let grid = GridSpec::new(1.0, 50).unwrap();
        let samples = pdlab::density::ensemble(&s, &grid, 2000, seed).unwrap();
        let est = kde(&samples, Bandwidth::Rule, None).unwrap();
        prop_assert!(est.density.iter().all(|&p| p >= 0.0));
        prop_assert!((trapezoid(&est.grid, &est.density) - 1.0).abs() <= 0.02);
    }
}

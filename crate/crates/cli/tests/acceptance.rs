//! Acceptance suite: one check per criterion, each printing a single PASS/FAIL line.
//!
//! Built without the libtest harness so the lines are always shown. Criteria run one
//! after another, so the timed ones do not compete for cores. Pass criterion numbers
//! (`cargo test -p pdlab-cli --test acceptance -- 4 5`) to run a subset.

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use pdlab::bounds::{self, Horizon};
use pdlab::density::{self, Bandwidth};
use pdlab::integrate::{euler_path, explicit_additive_path};
use pdlab::malliavin::{
    check_difference_bound, check_final_lower_bound, check_sup_lower_bound, ensemble_fields,
    propagate_derivative, BoundCheck, BoundParams,
};
use pdlab::model::validate;
use pdlab::quadrature::adaptive_simpson;
use pdlab::verify::{self, gradient_errors, picard_consistency, random_pairs, transform_checks};
use pdlab::{Coefficient, GridSpec, NoiseBlock, ProblemSpec, ValidatedSpec};
use rayon::prelude::*;

const SEED: u64 = 20240611;

type Outcome = (bool, String);

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

fn brownian(alpha: f64) -> ValidatedSpec {
    spec(0.0, alpha, Coefficient::constant(0.0), Coefficient::constant(1.0))
}

fn tanh_spec() -> ValidatedSpec {
    spec(0.0, 0.1, Coefficient::tanh(0.1), Coefficient::constant(1.0))
}

fn multiplicative_spec() -> ValidatedSpec {
    spec(0.0, 0.1, Coefficient::tanh(0.1), Coefficient::sine(1.0, 2.0))
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn criterion_01_additive_identity() -> Outcome {
    let grid = GridSpec::new(1.0, 1000).unwrap();
    let start = Instant::now();
    let mut worst = 0.0f64;
    for alpha in [-1.0, 0.0, 0.3, 0.9] {
        let s = brownian(alpha);
        for p in 0..100 {
            let noise = NoiseBlock::generate(SEED, p, &grid);
            let a = euler_path(&s, &grid, &noise).unwrap();
            let b = explicit_additive_path(s.x0, alpha, 1.0, &noise);
            for (u, v) in a.x.iter().zip(&b.x) {
                worst = worst.max((u - v).abs());
            }
        }
    }
    let elapsed = secs(start.elapsed());
    (
        worst <= 1e-12 && elapsed < 1.0,
        format!("max per-step |euler − explicit| = {worst:.3e} (≤ 1e-12), runtime {elapsed:.3} s (< 1 s)"),
    )
}

fn criterion_02_malliavin_closed_form() -> Outcome {
    let grid = GridSpec::new(1.0, 1000).unwrap();
    let start = Instant::now();
    let mut worst = 0.0f64;
    for alpha in [-1.0, 0.0, 0.3, 0.9] {
        let s = brownian(alpha);
        let fields = ensemble_fields(&s, &grid, SEED, 0..1000).unwrap();
        for (_, f) in &fields {
            let tau = f.argmax_idx as f64 * grid.dt();
            let closed = tau / (1.0 - alpha).powi(2) + (1.0 - tau);
            worst = worst.max((f.h_norm_sq_final() - closed).abs());
        }
    }
    let elapsed = secs(start.elapsed());
    (
        worst <= 1e-10 && elapsed < 10.0,
        format!("max |‖DX_T‖² − closed form| = {worst:.3e} (≤ 1e-10), runtime {elapsed:.3} s (< 10 s)"),
    )
}

fn criterion_03_gradient_check() -> Outcome {
    let s = spec(0.0, 0.2, Coefficient::sine(0.5, 0.0), Coefficient::constant(1.0));
    let grid = GridSpec::new(1.0, 2000).unwrap();
    let mut errs = gradient_errors(&s, &grid, SEED, 100, 1e-4).unwrap();
    errs.sort_by(f64::total_cmp);
    let median = 0.5 * (errs[49] + errs[50]);
    (
        median <= 1e-2,
        format!("median relative error {median:.3e} (≤ 1e-2), max {:.3e}, 100 paths", errs[99]),
    )
}

struct SweepResult {
    sup: BoundCheck,
    fin: BoundCheck,
    t0: f64,
    theta_t0: f64,
    sup_bad_paths: usize,
    fin_bad_paths: usize,
}

/// Per-path sweeps shared by criteria 4 and 5.
fn sweeps() -> &'static SweepResult {
    static CELL: OnceLock<SweepResult> = OnceLock::new();
    CELL.get_or_init(|| {
        let s = tanh_spec();
        let grid = GridSpec::new(1.0, 1000).unwrap();
        let (alpha, lb) = (0.1, 0.1);
        let t0 = match bounds::max_horizon(alpha, lb) {
            Horizon::Zero => 0.0,
            h => h.as_f64().min(1.0),
        };
        let p = BoundParams {
            alpha,
            lb,
            sigma_bar: 1.0,
            slack: 10.0 * grid.dt(),
        };
        let per_path: Vec<(BoundCheck, BoundCheck)> = (0..10_000u64)
            .into_par_iter()
            .map(|path| {
                let noise = NoiseBlock::generate(SEED, path, &grid);
                let x = euler_path(&s, &grid, &noise).unwrap();
                let f = propagate_derivative(&x, &s, &grid, false).unwrap();
                (check_sup_lower_bound(&f, &p), check_final_lower_bound(&f, t0, &p))
            })
            .collect();
        SweepResult {
            sup: per_path.iter().map(|r| r.0).fold(BoundCheck::default(), BoundCheck::merge),
            fin: per_path.iter().map(|r| r.1).fold(BoundCheck::default(), BoundCheck::merge),
            t0,
            theta_t0: bounds::theta(t0, alpha, lb),
            sup_bad_paths: per_path.iter().filter(|r| !r.0.passed()).count(),
            fin_bad_paths: per_path.iter().filter(|r| !r.1.passed()).count(),
        }
    })
}

fn criterion_04_sup_lower_bound() -> Outcome {
    let r = sweeps();
    (
        r.sup_bad_paths == 0,
        format!(
            "{} of 10000 paths violate the sup lower bound ({} of {} grid checks), worst ratio {:.4}",
            r.sup_bad_paths, r.sup.violations, r.sup.checked, r.sup.worst_ratio
        ),
    )
}

fn criterion_05_final_lower_bound() -> Outcome {
    let r = sweeps();
    (
        r.theta_t0 < 0.5 && r.fin_bad_paths == 0 && r.fin.checked > 0,
        format!(
            "t0 = {:.6}, θ(t0) = {:.6} (< 1/2); {} of 10000 paths violate ({} of {} grid checks), worst ratio {:.4}",
            r.t0, r.theta_t0, r.fin_bad_paths, r.fin.violations, r.fin.checked, r.fin.worst_ratio
        ),
    )
}

/// Expected to fail: the inequality does not hold for the Euler field, nor for the
/// continuous process (at α = 0 and b′ = 0 the bound is zero while ‖DB_t‖² = t).
fn criterion_06_difference_bound() -> Outcome {
    let s = tanh_spec();
    let grid = GridSpec::new(1.0, 1000).unwrap();
    let p = BoundParams {
        alpha: 0.1,
        lb: 0.1,
        sigma_bar: 1.0,
        slack: 10.0 * grid.dt(),
    };
    let fields = ensemble_fields(&s, &grid, SEED, 0..100).unwrap();
    let check = fields
        .iter()
        .enumerate()
        .map(|(i, (_, f))| check_difference_bound(f, &random_pairs(SEED, i as u64, grid.n_steps, 1000), &p))
        .fold(BoundCheck::default(), BoundCheck::merge);
    (
        check.passed(),
        format!(
            "{} of {} pairs exceed the difference bound beyond slack (smallest bound/lhs {:.4})",
            check.violations, check.checked, check.worst_ratio
        ),
    )
}

fn criterion_07_theta_boundary_values() -> Outcome {
    let h = bounds::max_horizon(0.0, 1.0).as_f64();
    let a = bounds::alpha_threshold(0.0, 0.0);
    // roots of θ = 1/2: 2u + 2√u = 1/2 with u = L²t0²/2 at α = 0, 4α² + 2√2·α = 1/2 at L = 0
    let h_exact = (2.0 - 2f64.sqrt()) / 2.0;
    let a_exact = (2.0 - 2f64.sqrt()) / 4.0;
    let (eh, ea) = ((h - h_exact).abs(), (a - a_exact).abs());
    (
        eh <= 1e-10 && ea <= 1e-10,
        format!("max_horizon(0, 1) = {h:.15} (err {eh:.1e}); α* = {a:.15} (err {ea:.1e}); tol 1e-10"),
    )
}

fn criterion_08_ou_strong_order() -> Outcome {
    const FINE_LOG2: u32 = 18;
    const N_PATHS: u64 = 200;
    let (rate, x0) = (1.0, 1.0);
    let s = spec(x0, 0.0, Coefficient::ornstein_uhlenbeck(rate, 0.0), Coefficient::constant(1.0));
    let fine = GridSpec::new(1.0, 1 << FINE_LOG2).unwrap();
    let levels: Vec<u32> = (8..=12).collect();

    // per path: |X_T^dt − X_T^ref| for each level
    let errors: Vec<Vec<f64>> = (0..N_PATHS)
        .into_par_iter()
        .map(|p| {
            let noise = NoiseBlock::generate(SEED, p, &fine);
            // exact OU transition on the fine grid: the stochastic integral over each
            // fine step is approximated by e^{-θh/2}·ΔB, an O(h²) local error
            let h = fine.dt();
            let (decay, half) = ((-rate * h).exp(), (-rate * h / 2.0).exp());
            let reference = noise.db().iter().fold(x0, |x, &db| decay * x + half * db);
            levels
                .iter()
                .map(|&l| {
                    let grid = GridSpec::new(1.0, 1 << l).unwrap();
                    let chunk = 1usize << (FINE_LOG2 - l);
                    let coarse = noise.db().chunks(chunk).map(|c| c.iter().sum()).collect();
                    let x = euler_path(&s, &grid, &NoiseBlock::from_increments(coarse, grid.dt())).unwrap();
                    (x.terminal() - reference).abs()
                })
                .collect()
        })
        .collect();
    let points: Vec<(f64, f64)> = levels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let mean = errors.iter().map(|e| e[i]).sum::<f64>() / N_PATHS as f64;
            (-(l as f64) * 2f64.ln(), mean.ln())
        })
        .collect();
    let n = points.len() as f64;
    let (mx, my) = (
        points.iter().map(|p| p.0).sum::<f64>() / n,
        points.iter().map(|p| p.1).sum::<f64>() / n,
    );
    let slope = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / points.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    let errs: Vec<String> = points.iter().map(|p| format!("{:.2e}", p.1.exp())).collect();
    (
        (0.8..=1.2).contains(&slope),
        format!("log-log slope {slope:.4} (in [0.8, 1.2]); mean errors dt = 2^-8..2^-12: {}", errs.join(", ")),
    )
}

fn criterion_09_density_oracle() -> Outcome {
    let (alpha, n_samples) = (0.5, 200_000);
    let s = brownian(alpha);
    let grid = GridSpec::new(1.0, 1000).unwrap();
    let start = Instant::now();
    let samples = density::ensemble(&s, &grid, n_samples, SEED).unwrap();
    let est = density::kde(&samples, Bandwidth::Rule, None).unwrap();
    let oracle: Vec<f64> = est
        .grid
        .iter()
        .map(|&z| density::oracle_driftless(0.0, 1.0, alpha, 1.0, z).unwrap())
        .collect();
    let l1 = density::l1_distance(&est.grid, &est.density, &oracle).unwrap();
    let elapsed = secs(start.elapsed());
    // the law decays like exp(−w²/2) on the left and exp(−(1−α)²w²/2) on the right
    let p = |z: f64| density::oracle_driftless(0.0, 1.0, alpha, 1.0, z).unwrap();
    let mass = adaptive_simpson(p, -12.0, 0.0, 1e-10).unwrap() + adaptive_simpson(p, 0.0, 24.0, 1e-10).unwrap();
    let norm_err = (mass - 1.0).abs();
    (
        l1 <= 0.02 && norm_err <= 1e-4 && elapsed < 60.0,
        format!(
            "L1(KDE, oracle) = {l1:.5} (≤ 0.02), |∫oracle − 1| = {norm_err:.2e} (≤ 1e-4), runtime {elapsed:.2} s (< 60 s)"
        ),
    )
}

/// The lift part is expected to fail: see the README.
fn criterion_10_lamperti_consistency() -> Outcome {
    let s = multiplicative_spec();
    let grid = GridSpec::new(1.0, 1000).unwrap();
    let c = transform_checks(&s, &grid, SEED, 1000, 10.0 * grid.dt()).unwrap();
    let ok_path = c.first_path_sup_diff <= 5e-2;
    let ok_round = c.round_trip <= 1e-8;
    let ok_lift = c.lift_violations == 0;
    (
        ok_path && ok_round && ok_lift,
        format!(
            "sup |F(X) − Y| on path 0 = {:.4} (≤ 5e-2; over 1000 paths median {:.4}, max {:.4}); \
             round trip {:.2e} (≤ 1e-8); lift violated on {} of 1000 paths (need 0)",
            c.first_path_sup_diff, c.median_sup_diff, c.max_sup_diff, c.round_trip, c.lift_violations
        ),
    )
}

fn criterion_11_picard_consistency() -> Outcome {
    let s = multiplicative_spec();
    let grid = GridSpec::new(1.0, 1000).unwrap();
    let (diff, converged, iters, monotone) = picard_consistency(&s, &grid, SEED).unwrap();
    (
        converged && iters <= verify::PICARD_MAX_ITER && diff <= 1e-5 && monotone,
        format!(
            "converged {converged} in {iters} iterations (≤ 30, tol 1e-6); sup |picard − euler| = {diff:.3e} (≤ 1e-5); \
             non-increasing after the second iterate: {monotone}"
        ),
    )
}

fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let key = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(key, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn criterion_12_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("config.json");
    let doc = serde_json::json!({
        "problem": {
            "x0": 0.0,
            "alpha": 0.1,
            "drift": { "preset_id": "tanh", "params": { "amplitude": 0.1 } },
            "diffusion": { "preset_id": "sine", "params": { "amplitude": 1.0, "offset": 2.0 } },
            "horizon": 1.0
        },
        "grid": { "n_steps": 1000 },
        "seed": 7,
        "n_paths": 200
    });
    std::fs::write(&config, serde_json::to_vec_pretty(&doc).unwrap()).unwrap();
    let run = |workers: &str, out: &Path| {
        let status = Command::new(env!("CARGO_BIN_EXE_pdlab"))
            .args(["simulate", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(out)
            .args(["--workers", workers])
            .env_remove("PDLAB_OUT_DIR")
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        read_tree(out)
    };
    let one = run("1", &tmp.path().join("w1"));
    let eight = run("8", &tmp.path().join("w8"));
    let differing: Vec<&String> = one
        .keys()
        .chain(eight.keys())
        .filter(|k| one.get(*k) != eight.get(*k))
        .collect();
    (
        !one.is_empty() && differing.is_empty(),
        format!(
            "{} files at --workers 1 vs {} at --workers 8; {} differ bitwise",
            one.len(),
            eight.len(),
            differing.len()
        ),
    )
}

const CRITERIA: [(u32, fn() -> Outcome); 12] = [
    (1, criterion_01_additive_identity),
    (2, criterion_02_malliavin_closed_form),
    (3, criterion_03_gradient_check),
    (4, criterion_04_sup_lower_bound),
    (5, criterion_05_final_lower_bound),
    (6, criterion_06_difference_bound),
    (7, criterion_07_theta_boundary_values),
    (8, criterion_08_ou_strong_order),
    (9, criterion_09_density_oracle),
    (10, criterion_10_lamperti_consistency),
    (11, criterion_11_picard_consistency),
    (12, criterion_12_determinism),
];

fn main() -> ExitCode {
    // numeric arguments select criteria; flags such as `--nocapture` are ignored
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (n, check) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let (ok, detail) = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        });
        println!("criterion {n:>2} {} {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failed.push(n);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all selected criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} failing: {:?}", failed.len(), failed);
        ExitCode::FAILURE
    }
}

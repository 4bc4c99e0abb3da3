use anyhow::Context as _;
use pdlab::bounds::regime_report;
use pdlab::density::{
    ensemble, kde, oracle_driftless, sample_stats, smoothness_diagnostic, smoothness_verdict, Bandwidth,
    DEFAULT_GRID_SDS,
};
use pdlab::integrate::euler_path;
use pdlab::lamperti::{self, build_transform};
use pdlab::malliavin::propagate_derivative;
use pdlab::model::{uniform_points, validate};
use pdlab::verify::{run_suites, SuiteStatus};
use pdlab::{GridSpec, NoiseBlock, ValidatedSpec};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::exit::{self, ConfigError};
use crate::output::{Sink, Table};

pub struct Context<'a> {
    pub config: &'a RunConfig,
    pub seed: u64,
    pub sink: Sink,
}

fn problem(cfg: &RunConfig) -> anyhow::Result<(ValidatedSpec, GridSpec)> {
    let spec = validate(&cfg.problem).context("problem")?;
    let grid = GridSpec::for_spec(&spec, cfg.grid.n_steps).context("grid")?;
    Ok((spec, grid))
}

#[derive(Serialize)]
struct Moments {
    mean: f64,
    sd: f64,
    min: f64,
    max: f64,
}

fn moments(v: &[f64]) -> Moments {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Moments {
        mean,
        sd: var.sqrt(),
        min: v.iter().copied().fold(f64::INFINITY, f64::min),
        max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

struct PathSummary {
    terminal: f64,
    max: f64,
    argmax_time: f64,
    new_max_steps: usize,
    rows: Option<Vec<Vec<f64>>>,
}

pub fn simulate(ctx: &mut Context) -> anyhow::Result<u8> {
    let cfg = ctx.config;
    let (spec, grid) = problem(cfg)?;
    let keep = cfg.simulate.path_files;
    let seed = ctx.seed;
    let paths = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let path = euler_path(&spec, &grid, &NoiseBlock::generate(seed, p, &grid))?;
            let n = path.n_steps();
            let rows = ((p as usize) < keep).then(|| {
                (0..=n)
                    .map(|k| {
                        // increment over [t_{k-1}, t_k], 0 at t_0
                        let db = if k == 0 { 0.0 } else { path.db[k - 1] };
                        let argmax_time = grid.time(path.argmax_idx[k]);
                        vec![grid.time(k), path.x[k], path.running_max[k], argmax_time, db]
                    })
                    .collect()
            });
            Ok(PathSummary {
                terminal: path.terminal(),
                max: path.running_max[n],
                argmax_time: grid.time(path.argmax_idx[n]),
                new_max_steps: (1..=n).filter(|&k| path.is_new_max(k)).count(),
                rows,
            })
        })
        .collect::<pdlab::Result<Vec<_>>>()?;

    for (p, s) in paths.iter().enumerate() {
        if let Some(rows) = &s.rows {
            ctx.sink.table(
                &format!("paths/path_{p:06}"),
                &Table {
                    columns: vec!["t", "x", "running_max", "argmax_time", "db"],
                    rows: rows.clone(),
                },
            )?;
        }
    }
    ctx.sink.table(
        "terminal",
        &Table {
            columns: vec!["x_T", "m_T", "argmax_t"],
            rows: paths.iter().map(|s| vec![s.terminal, s.max, s.argmax_time]).collect(),
        },
    )?;

    #[derive(Serialize)]
    struct Summary {
        n_paths: usize,
        n_steps: usize,
        dt: f64,
        initial_state: f64,
        terminal: Moments,
        running_max: Moments,
        argmax_time: Moments,
        mean_new_max_fraction: f64,
    }
    let col = |f: fn(&PathSummary) -> f64| paths.iter().map(f).collect::<Vec<f64>>();
    let summary = Summary {
        n_paths: cfg.n_paths,
        n_steps: grid.n_steps,
        dt: grid.dt(),
        initial_state: spec.initial_state(),
        terminal: moments(&col(|s| s.terminal)),
        running_max: moments(&col(|s| s.max)),
        argmax_time: moments(&col(|s| s.argmax_time)),
        mean_new_max_fraction: paths.iter().map(|s| s.new_max_steps as f64).sum::<f64>()
            / (paths.len() * grid.n_steps) as f64,
    };
    say!(
        "simulated {} paths of {} steps: mean X_T = {:.6}, mean M_T = {:.6}",
        cfg.n_paths, grid.n_steps, summary.terminal.mean, summary.running_max.mean
    );
    ctx.sink.json("summary.json", &summary)?;
    Ok(exit::OK)
}

pub fn derivative(ctx: &mut Context) -> anyhow::Result<u8> {
    let cfg = ctx.config;
    let (spec, grid) = problem(cfg)?;
    let seed = ctx.seed;
    let ones = vec![1.0; grid.n_steps];
    let rows = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let path = euler_path(&spec, &grid, &NoiseBlock::generate(seed, p, &grid))?;
            let f = propagate_derivative(&path, &spec, &grid, false)?;
            let field = (p == 0 && cfg.derivative.write_field).then(|| (f.d_x.clone(), f.d_m.clone()));
            let row = vec![
                p as f64,
                f.h_norm_sq_final(),
                f.m_norm_sq(),
                f.sup_h_norm_sq,
                grid.time(f.argmax_idx),
                f.inner_product(&ones),
            ];
            Ok((row, field))
        })
        .collect::<pdlab::Result<Vec<_>>>()?;
    if let Some((_, Some((d_x, d_m)))) = rows.first() {
        ctx.sink.table(
            "field_path_000000",
            &Table {
                columns: vec!["r", "d_r_x_T", "d_r_m_T"],
                rows: (0..grid.n_steps).map(|i| vec![grid.time(i), d_x[i], d_m[i]]).collect(),
            },
        )?;
    }
    let table = Table {
        columns: vec!["path", "h_norm_sq_T", "m_norm_sq_T", "sup_h_norm_sq", "argmax_t", "directional_1"],
        rows: rows.into_iter().map(|(r, _)| r).collect(),
    };
    #[derive(Serialize)]
    struct Summary {
        n_paths: usize,
        n_steps: usize,
        h_norm_sq_t: Moments,
        m_norm_sq_t: Moments,
        sup_h_norm_sq: Moments,
        directional_1: Moments,
    }
    let col = |i: usize| table.rows.iter().map(|r| r[i]).collect::<Vec<f64>>();
    let summary = Summary {
        n_paths: cfg.n_paths,
        n_steps: grid.n_steps,
        h_norm_sq_t: moments(&col(1)),
        m_norm_sq_t: moments(&col(2)),
        sup_h_norm_sq: moments(&col(3)),
        directional_1: moments(&col(5)),
    };
    say!(
        "derivatives of {} paths: mean ‖DX_T‖² = {:.6}, min ‖DX_T‖² = {:.6}",
        cfg.n_paths, summary.h_norm_sq_t.mean, summary.h_norm_sq_t.min
    );
    ctx.sink.table("derivative", &table)?;
    ctx.sink.json("derivative_summary.json", &summary)?;
    Ok(exit::OK)
}

pub fn regime(ctx: &mut Context) -> anyhow::Result<u8> {
    let (spec, _) = problem(ctx.config)?;
    let t0 = ctx.config.regime.t0.unwrap_or(spec.horizon);
    let report = regime_report(&spec, t0)?;
    say!(
        "theta(t0 = {t0}) = {:.6}: admissible = {}, t0_max = {}",
        report.theta_at_t0,
        report.admissible,
        serde_json::to_string(&report.t0_max)?
    );
    ctx.sink.json("regime.json", &report)?;
    Ok(exit::OK)
}

pub fn density(ctx: &mut Context) -> anyhow::Result<u8> {
    let cfg = ctx.config;
    let (spec, grid) = problem(cfg)?;
    let external = cfg.read_samples()?;
    let from_file = external.is_some();
    let samples = match external {
        Some(s) => s,
        None if cfg.n_paths == 0 => {
            return Err(ConfigError(
                "density: n_paths is 0 and no density.samples file was given".into(),
            )
            .into())
        }
        None => ensemble(&spec, &grid, cfg.n_paths, ctx.seed)?,
    };
    let stats = sample_stats(&samples)?;
    if cfg.density.grid_points < 2 {
        return Err(ConfigError("density.grid_points must be at least 2".into()).into());
    }
    let half = DEFAULT_GRID_SDS * stats.sd;
    let z: Vec<f64> = uniform_points(stats.mean - half, stats.mean + half, cfg.density.grid_points).collect();
    let bandwidth = cfg.density.bandwidth.map_or(Bandwidth::Rule, Bandwidth::Explicit);
    let est = kde(&samples, bandwidth, Some(&z))?;
    let diagnostic = smoothness_diagnostic(&est, &cfg.density.thresholds)?;

    let oracle = match (spec.drift.as_constant(), spec.diffusion.as_constant()) {
        (Some(b), Some(sigma)) if b == 0.0 && !from_file => Some(
            z.par_iter()
                .map(|&v| oracle_driftless(spec.x0, sigma, spec.alpha, spec.horizon, v))
                .collect::<pdlab::Result<Vec<f64>>>()?,
        ),
        _ => None,
    };
    let l1_to_oracle = oracle.as_ref().map(|o| est.l1_to(o)).transpose()?;
    // non-constant σ goes through the transform; a degenerate σ just has no regime verdict
    let regime = regime_report(&spec, spec.horizon).ok();
    let verdict = regime
        .as_ref()
        .map(|r| smoothness_verdict(r.admissible, diagnostic.passed));

    let mut columns = vec!["z", "p_hat", "p_hat_d1", "p_hat_d2"];
    if oracle.is_some() {
        columns.push("p_oracle");
    }
    let rows = (0..z.len())
        .map(|i| {
            let mut r = vec![z[i], est.density[i], est.ladder[1].d1[i], est.ladder[1].d2[i]];
            if let Some(o) = &oracle {
                r.push(o[i]);
            }
            r
        })
        .collect();
    ctx.sink.table("density", &Table { columns, rows })?;

    #[derive(Serialize)]
    struct Diagnostic<'a> {
        n_samples: usize,
        samples_from_file: bool,
        bandwidth: f64,
        ladder_bandwidths: Vec<f64>,
        integral: f64,
        l1_to_oracle: Option<f64>,
        smoothness: &'a pdlab::density::SmoothnessReport,
        theta_at_horizon: Option<f64>,
        admissible_regime: Option<bool>,
        verdict: Option<pdlab::density::SmoothnessVerdict>,
    }
    let diag = Diagnostic {
        n_samples: est.n_samples,
        samples_from_file: from_file,
        bandwidth: est.bandwidth,
        ladder_bandwidths: est.ladder.iter().map(|l| l.bandwidth).collect(),
        integral: est.integral(),
        l1_to_oracle,
        smoothness: &diagnostic,
        theta_at_horizon: regime.as_ref().map(|r| r.theta_at_t0),
        admissible_regime: regime.as_ref().map(|r| r.admissible),
        verdict,
    };
    say!(
        "density from {} samples, h = {:.6}: integral {:.6}{}; diagnostic {} (score {:.3})",
        est.n_samples,
        est.bandwidth,
        diag.integral,
        l1_to_oracle.map(|l| format!(", L1 to oracle {l:.6}")).unwrap_or_default(),
        if diagnostic.passed { "stable" } else { "unstable" },
        diagnostic.score
    );
    ctx.sink.json("diagnostic.json", &diag)?;
    Ok(exit::OK)
}

pub fn transform(ctx: &mut Context) -> anyhow::Result<u8> {
    let cfg = ctx.config;
    let (spec, _) = problem(cfg)?;
    let domain = match cfg.transform.domain {
        Some([lo, hi]) => (lo, hi),
        None => lamperti::default_domain(&spec),
    };
    let table = build_transform(&spec.diffusion, spec.x0, domain, cfg.transform.n_nodes, cfg.transform.tol)?;
    let transformed = lamperti::transformed_spec(&spec, &table)?;
    let (z_lo, z_hi) = table.range();
    ctx.sink.csv(
        "transform",
        &Table {
            columns: vec!["y", "F"],
            rows: table
                .nodes()
                .iter()
                .zip(table.node_values())
                .map(|(&y, &f)| vec![y, f])
                .collect(),
        },
    )?;
    #[derive(Serialize)]
    struct Doc {
        problem: pdlab::ProblemSpec,
        domain: (f64, f64),
        range: (f64, f64),
        noise_sign: f64,
        n_nodes: usize,
        inf_abs_sigma: f64,
        b_tilde_lipschitz: f64,
    }
    let doc = Doc {
        b_tilde_lipschitz: pdlab::model::sup_norm_estimate(
            &transformed.drift,
            1,
            z_lo,
            z_hi,
            lamperti::SUP_GRID_POINTS,
        ),
        problem: transformed,
        domain: table.domain(),
        range: table.range(),
        noise_sign: table.noise_sign(),
        n_nodes: table.nodes().len(),
        inf_abs_sigma: lamperti::inf_abs_sigma(&spec.diffusion, table.domain()),
    };
    say!(
        "transform on [{:.6}, {:.6}] -> [{z_lo:.6}, {z_hi:.6}], ‖b̃′‖ ≈ {:.6}",
        doc.domain.0, doc.domain.1, doc.b_tilde_lipschitz
    );
    ctx.sink.json("transformed_spec.json", &doc)?;
    Ok(exit::OK)
}

pub fn verify(ctx: &mut Context) -> anyhow::Result<u8> {
    let (spec, grid) = problem(ctx.config)?;
    let report = run_suites(&spec, &grid, ctx.seed, &ctx.config.verify)?;
    for s in &report.suites {
        let tag = match s.status {
            SuiteStatus::Passed => "PASS",
            SuiteStatus::Failed => "FAIL",
            SuiteStatus::Skipped => "SKIP",
            SuiteStatus::Informational => "INFO",
        };
        say!("{tag} {:<28} metric {:>12.4e}  tol {:>10.3e}  {}", s.name, s.metric, s.tolerance, s.detail);
    }
    ctx.sink.json("verify.json", &report)?;
    Ok(if report.passed { exit::OK } else { exit::VERIFICATION })
}

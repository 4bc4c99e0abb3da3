//! `pdlab`: command-line driver for the max-perturbed diffusion lab.

/// `println!` that ignores a closed stdout (e.g. output piped into `head`).
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

mod commands;
mod config;
mod exit;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::Context;
use crate::output::{Metadata, Sink};

#[derive(Parser)]
#[command(name = "pdlab", version, about = "Numerical lab for diffusions perturbed by their running maximum")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides PDLAB_OUT_DIR and output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate Euler paths: per-path CSV, terminal values and a JSON summary.
    Simulate(Common),
    /// Pathwise Malliavin derivatives and H-norm summaries.
    Derivative(Common),
    /// θ-regime report: admissibility, maximal horizon, lower-bound curve.
    Regime(Common),
    /// Kernel density estimate of X_T with the smoothness diagnostic.
    Density(Common),
    /// Unit-diffusion transform table and transformed problem.
    Transform(Common),
    /// Run the invariant suites; exit 4 on any failure.
    Verify(Common),
}

impl Command {
    fn parts(&self) -> (&'static str, &Common) {
        match self {
            Command::Simulate(c) => ("simulate", c),
            Command::Derivative(c) => ("derivative", c),
            Command::Regime(c) => ("regime", c),
            Command::Density(c) => ("density", c),
            Command::Transform(c) => ("transform", c),
            Command::Verify(c) => ("verify", c),
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<u8> {
    let (name, common) = cli.command.parts();
    let loaded = config::load(&common.config)?;
    let cfg = &loaded.config;
    let seed = common.seed.unwrap_or(cfg.seed);
    let dir = cfg.out_dir(common.out.as_deref());
    let meta = Metadata {
        tool: "pdlab",
        version: env!("CARGO_PKG_VERSION"),
        command: name,
        config_sha256: loaded.sha256.clone(),
        seed,
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(common.workers).build()?;
    let mut ctx = Context {
        config: cfg,
        seed,
        sink: Sink::new(dir.clone(), meta, cfg.output.format)?,
    };
    let code = pool.install(|| match cli.command {
        Command::Simulate(_) => commands::simulate(&mut ctx),
        Command::Derivative(_) => commands::derivative(&mut ctx),
        Command::Regime(_) => commands::regime(&mut ctx),
        Command::Density(_) => commands::density(&mut ctx),
        Command::Transform(_) => commands::transform(&mut ctx),
        Command::Verify(_) => commands::verify(&mut ctx),
    })?;
    for path in ctx.sink.written() {
        say!("wrote {}", output::relative(&dir, path).display());
    }
    Ok(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit::classify(&err))
        }
    }
}

use std::path::{Path, PathBuf};

use anyhow::Context;
use pdlab::density::SmoothnessThresholds;
use pdlab::verify::VerifyOptions;
use pdlab::ProblemSpec;
use serde::Deserialize;

use crate::exit::ConfigError;

/// Environment variable overriding the output directory (below `--out`).
pub const OUT_DIR_ENV: &str = "PDLAB_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "pdlab-out";

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub grid: GridConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub derivative: DerivativeConfig,
    #[serde(default)]
    pub regime: RegimeConfig,
    #[serde(default)]
    pub density: DensityConfig,
    #[serde(default)]
    pub transform: TransformConfig,
    #[serde(default)]
    pub verify: VerifyOptions,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_paths() -> usize {
    100
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_steps: usize,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    /// Number of paths written as individual files; the summary covers all `n_paths`.
    pub path_files: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { path_files: 10 }
    }
}

#[derive(Clone, Copy, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DerivativeConfig {
    /// Also write the full field `D_r X_T` of path 0.
    pub write_field: bool,
}

#[derive(Clone, Copy, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegimeConfig {
    /// Defaults to the problem horizon.
    pub t0: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DensityConfig {
    /// Explicit bandwidth; the `1.06·s·N^{-1/5}` rule when absent.
    pub bandwidth: Option<f64>,
    pub grid_points: usize,
    /// Previously simulated terminal values: first column, optional header, `#` comments.
    pub samples: Option<PathBuf>,
    pub thresholds: SmoothnessThresholds,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            bandwidth: None,
            grid_points: pdlab::density::DEFAULT_GRID_POINTS,
            samples: None,
            thresholds: SmoothnessThresholds::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransformConfig {
    pub n_nodes: usize,
    pub tol: f64,
    /// Working domain `[lo, hi]`; centered at the initial state when absent.
    pub domain: Option<[f64; 2]>,
}

impl Default for TransformConfig {
    fn default() -> Self {
        Self {
            n_nodes: pdlab::lamperti::DEFAULT_NODES,
            tol: pdlab::lamperti::DEFAULT_TOL,
            domain: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub format: Format,
}

/// A parsed config together with the bytes it was read from.
pub struct LoadedConfig {
    pub config: RunConfig,
    pub sha256: String,
}

pub fn load(path: &Path) -> anyhow::Result<LoadedConfig> {
    use sha2::{Digest, Sha256};

    let bytes = std::fs::read(path)
        .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
    let config: RunConfig = serde_json::from_slice(&bytes)
        .map_err(|e| ConfigError(format!("invalid config {}: {e}", path.display())))?;
    if config.grid.n_steps == 0 {
        return Err(ConfigError("grid.n_steps must be at least 1".into()).into());
    }
    Ok(LoadedConfig {
        config,
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

impl RunConfig {
    /// `--out`, then the environment, then the config, then [`DEFAULT_OUT_DIR`].
    pub fn out_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .or_else(|| self.output.dir.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }

    pub fn read_samples(&self) -> anyhow::Result<Option<Vec<f64>>> {
        let Some(path) = &self.density.samples else {
            return Ok(None);
        };
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| ConfigError(format!("cannot read samples {}: {e}", path.display())))?;
        let mut out = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.with_context(|| format!("reading {}", path.display()))?;
            let field = record.get(0).unwrap_or("").trim();
            match field.parse::<f64>() {
                Ok(v) => out.push(v),
                // a header row
                Err(_) if line == 0 => {}
                Err(_) => {
                    return Err(ConfigError(format!(
                        "samples {}: record {} is not a number: {field:?}",
                        path.display(),
                        line + 1
                    ))
                    .into())
                }
            }
        }
        Ok(Some(out))
    }
}

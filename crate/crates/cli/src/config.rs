//! Run configuration read from a TOML file. Every key is optional;
//! command-line flags take precedence and relative paths resolve against
//! the directory holding the config file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use serde::Deserialize;
use spreadfit::features::CovariateOptions;
use spreadfit::PriorConfig;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,

    // Input tables.
    pub cases: Option<PathBuf>,
    pub populations: Option<PathBuf>,
    pub covariates: Option<PathBuf>,
    pub covariate_meta: Option<PathBuf>,
    pub weather: Option<PathBuf>,
    pub interventions: Option<PathBuf>,
    pub calendar: Option<PathBuf>,
    pub params: Option<PathBuf>,
    pub draws: Option<Vec<PathBuf>>,

    // Panel window.
    pub start: Option<NaiveDate>,
    pub n_days: Option<usize>,

    // Synthetic scenario.
    pub n_locations: Option<usize>,
    pub ages: Option<Vec<String>>,
    pub r0: Option<f64>,
    pub psi: Option<f64>,
    pub init_mean: Option<f64>,
    pub noise_sd: Option<f64>,
    pub reporting_rate: Option<f64>,
    pub generation_mean: Option<f64>,
    pub incubation_mean: Option<f64>,
    pub delay_sd: Option<f64>,
    pub benchmark_covariates: Option<bool>,
    pub population: Option<f64>,
    pub report_delay: Option<f64>,
    /// `per-individual` or `constant`.
    pub variant: Option<String>,

    // Sampler.
    pub chains: Option<usize>,
    pub burn_in: Option<usize>,
    pub keep: Option<usize>,
    pub thin: Option<usize>,
    pub progress_every: Option<usize>,
    pub monitor_latent: Option<bool>,
    pub frozen: Option<Vec<String>>,
    pub priors: Option<PriorConfig>,

    // Reduced-form estimator.
    pub growth_window: Option<usize>,
    /// `age` (one group per age) or `all`.
    pub group_by: Option<String>,
    pub bootstrap: Option<usize>,

    pub covariate_options: Option<CovariateOptions>,
}

impl Config {
    /// Parses `path` and rebases its relative paths on the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: Config = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(v) = p {
                if v.is_relative() {
                    *v = base.join(&*v);
                }
            }
        };
        for p in [
            &mut cfg.cases,
            &mut cfg.populations,
            &mut cfg.covariates,
            &mut cfg.covariate_meta,
            &mut cfg.weather,
            &mut cfg.interventions,
            &mut cfg.calendar,
            &mut cfg.params,
        ] {
            rebase(p);
        }
        if let Some(draws) = &mut cfg.draws {
            for d in draws.iter_mut().filter(|d| d.is_relative()) {
                *d = base.join(&*d);
            }
        }
        Ok(cfg)
    }
}

/// First of the flag value and the config value.
pub fn pick<T: Clone>(flag: &Option<T>, config: &Option<T>) -> Option<T> {
    flag.clone().or_else(|| config.clone())
}

pub fn require<T>(value: Option<T>, what: &str) -> Result<T> {
    match value {
        Some(v) => Ok(v),
        None => bail!("missing input: {what} (pass it as a flag or set it in the config)"),
    }
}

//! Fixtures shared by the benchmarks.

use spreadfit::synthetic::{benchmark_scenario, Scenario, ScenarioConfig};
use spreadfit::{FitConfig, Result};

/// The 20-compartment, 80-day benchmark panel with three covariates.
pub fn benchmark(seed: u64) -> Result<Scenario> {
    benchmark_scenario(&ScenarioConfig::default(), seed)
}

/// `iterations` sampler sweeps per chain, nothing discarded.
pub fn sweeps(iterations: usize, seed: u64) -> FitConfig {
    FitConfig {
        n_burn: 0,
        n_keep: iterations,
        thin: 1,
        seed,
        progress_every: 0,
        ..FitConfig::default()
    }
}

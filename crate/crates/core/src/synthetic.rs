//! Synthetic panels with known parameters, used for calibration checks and
//! benchmarks.

use std::collections::BTreeMap;

use chrono::NaiveDate;

use crate::distributions::DelayDistribution;
use crate::effects::{names, CovariateKind, CovariatePanel, CovariateSpec, EffectSet, Standardization};
use crate::error::Result;
use crate::features::{Panel, Weather};
use crate::model::{AgeGroup, CompartmentKey, LatentInfections, ModelParams, Populations, SEED_DAYS};
use crate::renewal::{simulate, SimulatedPanel, Variant};

pub const AWARENESS: &str = "awareness";
pub const TEMPERATURE: &str = names::TEMPERATURE;
pub const TRACED: &str = names::TRACED_RATIO;

/// Raw temperature behind the standardized covariate, in °C.
pub const TEMPERATURE_SCALE: Standardization = Standardization { mean: 10.0, sd: 8.0 };
/// Mean relative humidity of the synthetic weather, in %.
pub const HUMIDITY_PCT: f64 = 70.0;

/// First day of the awareness dummy.
pub const AWARENESS_FROM: usize = 25;

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub start: NaiveDate,
    pub n_locations: usize,
    pub ages: Vec<AgeGroup>,
    pub n_days: usize,
    /// Mean baseline reproductive number; compartments vary by up to +-10%.
    pub r0: f64,
    pub psi: f64,
    pub init_mean: f64,
    pub noise_sd: f64,
    pub reporting_rate: f64,
    pub generation_mean: f64,
    pub incubation_mean: f64,
    pub delay_sd: f64,
    /// Include the awareness, temperature and traced-ratio covariates.
    pub covariates: bool,
    pub population: f64,
}

impl Default for ScenarioConfig {
    /// 5 locations x 4 age groups x 80 days with three covariates.
    fn default() -> Self {
        Self {
            start: NaiveDate::from_ymd_opt(2020, 3, 1).expect("valid date"),
            n_locations: 5,
            ages: AgeGroup::ADULT.to_vec(),
            n_days: 80,
            r0: 2.5,
            psi: 0.5,
            init_mean: 10.0,
            noise_sd: 0.1,
            reporting_rate: 0.25,
            generation_mean: 5.5,
            incubation_mean: 5.5,
            delay_sd: 2.0,
            covariates: true,
            population: 100_000.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    /// True parameters, with the simulated latent infections filled in.
    pub params: ModelParams,
    pub panel: Panel,
    pub simulated: SimulatedPanel,
}

pub fn location_name(l: usize) -> String {
    format!("L{:02}", l + 1)
}

/// Standardized temperature of location `l` on day `t` relative to the start.
pub fn temperature_z(l: usize, t: i64) -> f64 {
    1.3 * (t as f64 / 9.0 + l as f64 * 0.7).sin()
}

/// Awareness dummy, a smooth standardized temperature series and a traced
/// ratio rising from 0.1 to about 0.6.
pub fn benchmark_covariates(start: NaiveDate, n_days: usize, locations: &[String]) -> Result<CovariatePanel> {
    let specs = vec![
        CovariateSpec::new(AWARENESS, CovariateKind::Dummy),
        CovariateSpec {
            stats: Some(TEMPERATURE_SCALE),
            ..CovariateSpec::new(TEMPERATURE, CovariateKind::Standardized)
        },
        CovariateSpec::new(TRACED, CovariateKind::Real),
    ];
    let mut panel = CovariatePanel::new(start, n_days, locations.to_vec(), specs)?;
    for (l, loc) in locations.iter().enumerate() {
        for t in 0..n_days {
            let day = t as f64;
            panel.set(loc, t, 0, if t >= AWARENESS_FROM { 1.0 } else { 0.0 })?;
            panel.set(loc, t, 1, temperature_z(l, t as i64))?;
            let traced = 0.1 + 0.5 / (1.0 + (-(day - 45.0) / 8.0).exp()) + 0.03 * (day / 3.0 + l as f64 * 0.7).cos();
            panel.set(loc, t, 2, traced)?;
        }
    }
    Ok(panel)
}

/// Effects per age: awareness cuts transmission by 45-60%, temperature by
/// about 9% per sd, tracing by about 30% per unit ratio.
pub fn benchmark_beta(a: usize) -> Vec<f64> {
    let awareness = [-0.55, -0.6, -0.5, -0.45, -0.58, -0.52];
    let temperature = [-0.09, -0.07, -0.1, -0.08, -0.09, -0.06];
    let traced = [-0.3, -0.35, -0.25, -0.3, -0.28, -0.32];
    let k = a % awareness.len();
    vec![awareness[k], temperature[k], traced[k]]
}

/// Daily weather over the calendar years touched by the panel, consistent
/// with the temperature covariate.
pub fn benchmark_weather(start: NaiveDate, n_days: usize, locations: &[String]) -> Weather {
    use chrono::Datelike;
    let end = start + chrono::Duration::days(n_days as i64);
    let first = NaiveDate::from_ymd_opt(start.year(), 1, 1).expect("valid date");
    let last = NaiveDate::from_ymd_opt(end.year(), 12, 31).expect("valid date");
    let mut weather = Weather::default();
    for (l, loc) in locations.iter().enumerate() {
        let mut d = first;
        while d <= last {
            let t = (d - start).num_days();
            let humidity = HUMIDITY_PCT + 8.0 * (t as f64 / 13.0 + l as f64).cos();
            weather.insert(loc, d, TEMPERATURE_SCALE.invert(temperature_z(l, t)), humidity);
            d += chrono::Duration::days(1);
        }
    }
    weather
}

pub fn scenario_params(cfg: &ScenarioConfig) -> Result<ModelParams> {
    let mut r0 = BTreeMap::new();
    for l in 0..cfg.n_locations {
        for (a, age) in cfg.ages.iter().enumerate() {
            let spread = 0.9 + 0.05 * ((l + 2 * a) % 5) as f64;
            r0.insert(CompartmentKey::new(location_name(l), *age), cfg.r0 * spread);
        }
    }
    let names: Vec<String> = if cfg.covariates {
        vec![AWARENESS.into(), TEMPERATURE.into(), TRACED.into()]
    } else {
        Vec::new()
    };
    let mut effects = EffectSet::new(r0, names);
    if cfg.covariates {
        for (a, age) in cfg.ages.iter().enumerate() {
            effects.beta.insert(*age, benchmark_beta(a));
        }
    }
    effects.noise_sd = cfg.noise_sd;
    Ok(ModelParams {
        effects,
        dispersion: cfg.ages.iter().map(|a| (*a, cfg.psi)).collect(),
        reporting_rate: cfg.reporting_rate,
        generation: DelayDistribution::gamma_default(cfg.generation_mean, cfg.delay_sd)?,
        incubation: DelayDistribution::gamma_default(cfg.incubation_mean, cfg.delay_sd)?,
        init_mean: cfg.init_mean,
        latent: BTreeMap::new(),
    })
}

/// Simulates the scenario and packages it as a fitting panel.
pub fn benchmark_scenario(cfg: &ScenarioConfig, seed: u64) -> Result<Scenario> {
    let mut params = scenario_params(cfg)?;
    let locations: Vec<String> = (0..cfg.n_locations).map(location_name).collect();
    let covariates = if cfg.covariates {
        benchmark_covariates(cfg.start, cfg.n_days, &locations)?
    } else {
        CovariatePanel::empty(cfg.start, cfg.n_days, locations.clone())?
    };
    let simulated = simulate(&params, &covariates, cfg.n_days, Variant::PerIndividual, seed)?;
    let mut populations = Populations::new();
    let mut keys = Vec::new();
    let mut cases = Vec::new();
    for c in &simulated.compartments {
        populations.insert(c.key.clone(), cfg.population)?;
        keys.push(c.key.clone());
        cases.push(c.sampled_cases.clone());
        params.latent.insert(
            c.key.clone(),
            LatentInfections {
                start: -(SEED_DAYS as i64),
                infections: c.latent.infections.clone(),
            },
        );
    }
    params.effects.noise = Some(simulated.noise.clone());
    let panel = Panel {
        start: cfg.start,
        n_days: cfg.n_days,
        keys,
        cases,
        populations,
        covariates,
    };
    panel.validate()?;
    Ok(Scenario {
        params,
        panel,
        simulated,
    })
}

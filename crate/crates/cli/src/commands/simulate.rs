use std::path::PathBuf;

use anyhow::Result;
use chrono::{Duration, NaiveDate};
use clap::Args;
use log::info;
use spreadfit::features::io::{save_cases, save_covariates, save_populations, save_weather};
use spreadfit::features::load_populations;
use spreadfit::inference::io::{load_params, save_params};
use spreadfit::renewal::simulate;
use spreadfit::synthetic::{benchmark_covariates, benchmark_weather, location_name, scenario_params, ScenarioConfig};
use spreadfit::{AgeGroup, CovariatePanel, Populations, Variant};

use crate::config::pick;
use crate::manifest::Recorder;
use crate::output::{num, Outputs};
use crate::Context;

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Parameter file `parameter,value`; the benchmark scenario is used when absent.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    populations: Option<PathBuf>,
    #[arg(long)]
    covariates: Option<PathBuf>,
    #[arg(long)]
    covariate_meta: Option<PathBuf>,
    #[arg(long)]
    start: Option<NaiveDate>,
    /// Days to simulate after the seeding period.
    #[arg(long)]
    horizon: Option<usize>,
    /// `per-individual` or `constant`.
    #[arg(long)]
    variant: Option<String>,
    /// Mean reporting delay in days used for the line list.
    #[arg(long)]
    report_delay: Option<f64>,
}

pub const LATENT_HEADER: [&str; 9] = [
    "location",
    "age_group",
    "day",
    "date",
    "infections",
    "viral_load",
    "r_value",
    "expected_cases",
    "cases",
];

fn scenario(ctx: &Context, start: NaiveDate, horizon: usize) -> Result<ScenarioConfig> {
    let c = &ctx.config;
    let d = ScenarioConfig::default();
    let ages = match &c.ages {
        Some(a) => a.iter().map(|s| s.parse::<AgeGroup>()).collect::<spreadfit::Result<Vec<_>>>()?,
        None => d.ages,
    };
    Ok(ScenarioConfig {
        start,
        n_locations: c.n_locations.unwrap_or(d.n_locations),
        ages,
        n_days: horizon,
        r0: c.r0.unwrap_or(d.r0),
        psi: c.psi.unwrap_or(d.psi),
        init_mean: c.init_mean.unwrap_or(d.init_mean),
        noise_sd: c.noise_sd.unwrap_or(d.noise_sd),
        reporting_rate: c.reporting_rate.unwrap_or(d.reporting_rate),
        generation_mean: c.generation_mean.unwrap_or(d.generation_mean),
        incubation_mean: c.incubation_mean.unwrap_or(d.incubation_mean),
        delay_sd: c.delay_sd.unwrap_or(d.delay_sd),
        covariates: c.benchmark_covariates.unwrap_or(d.covariates),
        population: c.population.unwrap_or(d.population),
    })
}

pub fn run(ctx: &Context, args: &SimulateArgs) -> Result<()> {
    let cfg = &ctx.config;
    let mut rec = Recorder::new("simulate", ctx.seed, ctx.config_path.as_deref());
    let variant: Variant = pick(&args.variant, &cfg.variant)
        .map(|v| v.parse())
        .transpose()?
        .unwrap_or_default();

    let cov_path = pick(&args.covariates, &cfg.covariates);
    let loaded = match &cov_path {
        Some(p) => {
            rec.input(p);
            let meta = pick(&args.covariate_meta, &cfg.covariate_meta);
            if let Some(m) = &meta {
                rec.input(m);
            }
            Some(spreadfit::features::load_covariates(p, meta.as_deref())?)
        }
        None => None,
    };
    let start = pick(&args.start, &cfg.start)
        .or_else(|| loaded.as_ref().map(CovariatePanel::start))
        .unwrap_or(ScenarioConfig::default().start);
    let horizon = pick(&args.horizon, &cfg.n_days)
        .or_else(|| loaded.as_ref().map(CovariatePanel::n_days))
        .unwrap_or(ScenarioConfig::default().n_days);
    let sc = scenario(ctx, start, horizon)?;

    let mut weather = None;
    let (params, covariates) = match pick(&args.params, &cfg.params) {
        Some(p) => {
            rec.input(&p);
            let params = load_params(&p, start)?;
            let covariates = match loaded {
                Some(c) => c,
                None => {
                    let mut locs: Vec<String> = params.compartments().into_iter().map(|k| k.location).collect();
                    locs.dedup();
                    CovariatePanel::empty(start, horizon, locs)?
                }
            };
            (params, covariates)
        }
        None => {
            let params = scenario_params(&sc)?;
            let locs: Vec<String> = (0..sc.n_locations).map(location_name).collect();
            let covariates = match loaded {
                Some(c) => c,
                None if sc.covariates => {
                    weather = Some(benchmark_weather(start, horizon, &locs));
                    benchmark_covariates(start, horizon, &locs)?
                }
                None => CovariatePanel::empty(start, horizon, locs)?,
            };
            (params, covariates)
        }
    };

    let populations = match pick(&args.populations, &cfg.populations) {
        Some(p) => {
            rec.input(&p);
            load_populations(&p)?
        }
        None => {
            let mut pops = Populations::new();
            for k in params.compartments() {
                pops.insert(k, sc.population)?;
            }
            pops
        }
    };

    info!(
        "simulating {} compartments over {horizon} days ({variant:?})",
        params.compartments().len()
    );
    let simulated = simulate(&params, &covariates, horizon, variant, ctx.seed)?;
    let delay = pick(&args.report_delay, &cfg.report_delay).unwrap_or(2.0);
    let records = simulated.to_case_records(ctx.seed, delay);
    info!("{} cases in the line list", records.len());

    let mut out = Outputs::new(&ctx.out);
    save_cases(&out.file("cases.csv"), &records)?;
    save_populations(&out.file("populations.csv"), &populations)?;
    if covariates.n_covariates() > 0 {
        let data = out.file("covariates.csv");
        let meta = out.file("covariates_meta.csv");
        save_covariates(&data, &meta, &covariates)?;
    }
    if let Some(w) = &weather {
        save_weather(&out.file("weather.csv"), w)?;
    }

    let mut rows = Vec::new();
    for c in &simulated.compartments {
        let l = &c.latent;
        for (j, n) in l.infections.iter().enumerate() {
            let day = l.start + j as i64;
            let panel_day = usize::try_from(day).ok();
            let at = |v: &Vec<f64>| panel_day.and_then(|t| v.get(t)).map(|x| num(*x)).unwrap_or_default();
            rows.push(vec![
                c.key.location.clone(),
                c.key.age.to_string(),
                day.to_string(),
                (start + Duration::days(day)).to_string(),
                n.to_string(),
                at(&l.viral_load),
                at(&l.r_values),
                at(&c.expected_cases),
                panel_day
                    .and_then(|t| c.sampled_cases.get(t))
                    .map(u64::to_string)
                    .unwrap_or_default(),
            ]);
        }
    }
    out.csv("latent.csv", &LATENT_HEADER, &rows)?;

    let mut truth = params.clone();
    truth.effects.noise = Some(simulated.noise.clone());
    save_params(&out.file("params.csv"), &truth, start)?;

    rec.finish(&ctx.out, &out.files)?;
    Ok(())
}

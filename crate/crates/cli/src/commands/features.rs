use std::path::PathBuf;

use anyhow::Result;
use chrono::Duration;
use clap::Args;
use log::info;
use spreadfit::features::io::save_covariates;
use spreadfit::features::{
    aggregate_onsets, build_covariates, load_calendar, load_interventions, load_weather, weekly_growth_rates,
    CovariateInputs, CovariateOptions,
};
use spreadfit::CompartmentKey;

use crate::config::pick;
use crate::inputs;
use crate::manifest::Recorder;
use crate::output::{opt, Outputs};
use crate::{Context, PanelArgs};

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[command(flatten)]
    panel: PanelArgs,
    /// Daily weather `location,date,temp_avg_c,rel_humidity_pct`.
    #[arg(long)]
    weather: Option<PathBuf>,
    /// Intervention periods `location,covariate,start_date,end_date`.
    #[arg(long)]
    interventions: Option<PathBuf>,
    /// Holiday calendar `location,date,holiday`.
    #[arg(long)]
    calendar: Option<PathBuf>,
    /// Window of the growth-rate table in days.
    #[arg(long, default_value_t = 7)]
    window: usize,
}

pub const GROWTH_HEADER: [&str; 6] = ["location", "week", "week_start", "previous", "current", "rate"];

pub fn run(ctx: &Context, args: &FeaturesArgs) -> Result<()> {
    let cfg = &ctx.config;
    let mut rec = Recorder::new("features", ctx.seed, ctx.config_path.as_deref());
    let records = inputs::records(&inputs::cases_path(ctx, &args.panel)?, &mut rec)?;
    let pops = inputs::populations(ctx, &args.panel, &mut rec)?;
    let (start, n_days) = inputs::window(ctx, &args.panel, None, &records)?;

    let mut load = |p: Option<PathBuf>| {
        if let Some(p) = &p {
            rec.input(p);
        }
        p
    };
    let weather = load(pick(&args.weather, &cfg.weather)).map(|p| load_weather(&p)).transpose()?;
    let interventions = load(pick(&args.interventions, &cfg.interventions))
        .map(|p| load_interventions(&p))
        .transpose()?
        .unwrap_or_default();
    let calendar = load(pick(&args.calendar, &cfg.calendar)).map(|p| load_calendar(&p)).transpose()?;

    // Tables that were not supplied switch their covariates off unless the
    // options are spelled out.
    let options = cfg.covariate_options.clone().unwrap_or(CovariateOptions {
        weather: weather.is_some(),
        holiday: calendar.is_some(),
        ..CovariateOptions::default()
    });
    let locations = pops.locations();
    let inputs = CovariateInputs {
        records: &records,
        populations: &pops,
        weather: weather.as_ref(),
        interventions: &interventions,
        calendar: calendar.as_ref(),
    };
    let panel = build_covariates(&inputs, &locations, start, n_days, &options)?;
    info!(
        "{} covariates for {} locations over {n_days} days from {start}",
        panel.n_covariates(),
        locations.len()
    );

    let mut out = Outputs::new(&ctx.out);
    let data = out.file("covariates.csv");
    let meta = out.file("covariates_meta.csv");
    save_covariates(&data, &meta, &panel)?;

    let mut rows = Vec::new();
    if n_days >= 2 * args.window {
        for loc in &locations {
            let keys: Vec<CompartmentKey> = pops.iter().map(|(k, _)| k.clone()).filter(|k| &k.location == loc).collect();
            let by_age = aggregate_onsets(&records, &keys, start, n_days);
            let counts: Vec<u64> = (0..n_days).map(|t| by_age.iter().map(|c| c[t]).sum()).collect();
            for g in weekly_growth_rates(&counts, args.window)? {
                rows.push(vec![
                    loc.clone(),
                    g.week.to_string(),
                    (start + Duration::days((g.week * args.window) as i64)).to_string(),
                    g.previous.to_string(),
                    g.current.to_string(),
                    opt(g.rate),
                ]);
            }
        }
    } else {
        info!("panel shorter than two growth windows; growth table left empty");
    }
    out.csv("growth_rates.csv", &GROWTH_HEADER, &rows)?;
    rec.finish(&ctx.out, &out.files)?;
    Ok(())
}

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Result};
use chrono::Duration;
use clap::Args;
use log::{info, warn};
use spreadfit::features::weekly_growth_rates;
use spreadfit::inference::io::{load_params, save_draws, save_summary};
use spreadfit::inference::{
    estimate_dispersion_reduced, mcmc_fit, summarize, Block, GrowthObservation, DEFAULT_BOOTSTRAP, MIN_UNITS,
};
use spreadfit::{FitConfig, Panel};

use crate::config::pick;
use crate::inputs;
use crate::manifest::Recorder;
use crate::output::{num, Outputs};
use crate::{Context, PanelArgs};

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    panel: PanelArgs,
    /// Run the reduced-form growth-variance estimator instead of the MCMC fit.
    #[arg(long)]
    reduced_form: bool,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    /// Iterations after burn-in.
    #[arg(long)]
    keep: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    /// Store latent infections and include them in Rhat.
    #[arg(long)]
    monitor_latent: bool,
    /// Parameter blocks held at their initial values (r0, beta, psi, noise,
    /// mu_gen, mu_inc, mu_init, reporting_rate, latent).
    #[arg(long, value_delimiter = ',')]
    frozen: Vec<String>,
    /// Starting point `parameter,value`; required when freezing parameter blocks.
    #[arg(long)]
    initial: Option<PathBuf>,
}

pub const REDUCED_HEADER: [&str; 10] = [
    "group",
    "period",
    "psi_hat",
    "ci_low",
    "ci_high",
    "r_hat",
    "scaled_variance",
    "mean_previous",
    "n_units",
    "estimable",
];

pub fn run(ctx: &Context, args: &FitArgs) -> Result<()> {
    let mut rec = Recorder::new("fit", ctx.seed, ctx.config_path.as_deref());
    let (panel, _) = inputs::panel(ctx, &args.panel, &mut rec)?;
    info!(
        "panel: {} compartments x {} days from {}, {} covariates",
        panel.keys.len(),
        panel.n_days,
        panel.start,
        panel.covariates.n_covariates()
    );
    let mut out = Outputs::new(&ctx.out);
    if args.reduced_form {
        reduced_form(ctx, &panel, &mut out)?;
    } else {
        mcmc(ctx, args, &panel, &mut rec, &mut out)?;
    }
    rec.finish(&ctx.out, &out.files)?;
    Ok(())
}

fn mcmc(ctx: &Context, args: &FitArgs, panel: &Panel, rec: &mut Recorder, out: &mut Outputs) -> Result<()> {
    let cfg = &ctx.config;
    let d = FitConfig::default();
    let frozen_names = if args.frozen.is_empty() {
        cfg.frozen.clone().unwrap_or_default()
    } else {
        args.frozen.clone()
    };
    let frozen = frozen_names
        .iter()
        .map(|s| Block::parse(s))
        .collect::<spreadfit::Result<Vec<_>>>()?;
    let initial = match pick(&args.initial, &cfg.params) {
        Some(p) => {
            rec.input(&p);
            Some(load_params(&p, panel.start)?)
        }
        None => None,
    };
    let config = FitConfig {
        n_chains: pick(&args.chains, &cfg.chains).unwrap_or(d.n_chains),
        n_burn: pick(&args.burn_in, &cfg.burn_in).unwrap_or(d.n_burn),
        n_keep: pick(&args.keep, &cfg.keep).unwrap_or(d.n_keep),
        thin: pick(&args.thin, &cfg.thin).unwrap_or(d.thin),
        seed: ctx.seed,
        frozen,
        monitor_latent: args.monitor_latent || cfg.monitor_latent.unwrap_or(false),
        initial,
        progress_every: cfg.progress_every.unwrap_or(d.progress_every),
    };
    let priors = cfg.priors.clone().unwrap_or_default();
    info!(
        "{} chains x ({} burn-in + {} kept, thin {})",
        config.n_chains, config.n_burn, config.n_keep, config.thin
    );
    let draws = mcmc_fit(panel, &priors, &config)?;
    for (block, rate) in &draws.acceptance {
        info!("acceptance {}: {rate:.3}", block.as_str());
    }
    info!("max Rhat {:.3}", draws.max_rhat());
    out.files.extend(save_draws(&ctx.out, &draws)?);
    let summary = summarize(&draws)?;
    save_summary(&out.file("summary.csv"), &summary.parameters)?;
    Ok(())
}

/// Weekly growth rates per location, grouped by age or pooled.
fn reduced_form(ctx: &Context, panel: &Panel, out: &mut Outputs) -> Result<()> {
    let cfg = &ctx.config;
    let window = cfg.growth_window.unwrap_or(7);
    let by_age = match cfg.group_by.as_deref().unwrap_or("age") {
        "age" => true,
        "all" => false,
        other => bail!("unknown group_by `{other}` (expected `age` or `all`)"),
    };
    let mut series: BTreeMap<(String, String), Vec<u64>> = BTreeMap::new();
    for (k, cases) in panel.keys.iter().zip(&panel.cases) {
        let group = if by_age { k.age.to_string() } else { "all".to_string() };
        let acc = series
            .entry((group, k.location.clone()))
            .or_insert_with(|| vec![0; panel.n_days]);
        for (a, c) in acc.iter_mut().zip(cases) {
            *a += c;
        }
    }
    let mut obs = Vec::new();
    for ((group, unit), counts) in &series {
        for g in weekly_growth_rates(counts, window)? {
            obs.push(GrowthObservation {
                unit: unit.clone(),
                group: group.clone(),
                period: (panel.start + Duration::days((g.week * window) as i64)).to_string(),
                previous: g.previous,
                current: g.current,
            });
        }
    }
    let mut usable: BTreeMap<(String, String), usize> = BTreeMap::new();
    for o in &obs {
        *usable.entry((o.group.clone(), o.period.clone())).or_default() += (o.previous > 0) as usize;
    }
    obs.retain(|o| {
        let n = usable[&(o.group.clone(), o.period.clone())];
        n >= MIN_UNITS
    });
    for ((g, p), n) in usable.iter().filter(|(_, n)| **n < MIN_UNITS) {
        warn!("skipping {g} / {p}: {n} units with cases in the previous week");
    }
    if obs.is_empty() {
        bail!(spreadfit::Error::TooFewUnits {
            group: "all".into(),
            n: 0,
            min: MIN_UNITS,
        });
    }
    let bootstrap = cfg.bootstrap.unwrap_or(DEFAULT_BOOTSTRAP);
    let estimates = estimate_dispersion_reduced(&obs, bootstrap, ctx.seed)?;
    let rows: Vec<Vec<String>> = estimates
        .iter()
        .map(|e| {
            vec![
                e.group.clone(),
                e.period.clone(),
                num(e.psi_hat),
                num(e.ci.0),
                num(e.ci.1),
                num(e.r_hat_used),
                num(e.scaled_variance),
                num(e.mean_previous),
                e.n_units.to_string(),
                e.estimable.to_string(),
            ]
        })
        .collect();
    out.csv("reduced_form.csv", &REDUCED_HEADER, &rows)?;
    info!("{} reduced-form estimates", rows.len());
    Ok(())
}

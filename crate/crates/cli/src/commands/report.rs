use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use clap::Args;
use log::{info, warn};
use spreadfit::effects::{groups, seasonal_extrapolation, total_effect, DAYS_PER_YEAR};
use spreadfit::features::load_weather;
use spreadfit::inference::io::{load_draws, save_summary};
use spreadfit::inference::{describe, summarize, DrawLayout, Moments};
use spreadfit::{AgeGroup, CovariatePanel, EffectSet, Populations};

use crate::config::pick;
use crate::inputs;
use crate::manifest::Recorder;
use crate::output::{num, Outputs};
use crate::{Context, PanelArgs};

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Per-chain draw files.
    #[arg(long, num_args = 1..)]
    draws: Vec<PathBuf>,
    /// Directory holding `draws_chain*.csv` from a previous fit.
    #[arg(long)]
    fit_dir: Option<PathBuf>,
    #[command(flatten)]
    panel: PanelArgs,
    /// Daily weather for the seasonal profile.
    #[arg(long)]
    weather: Option<PathBuf>,
}

const MOMENT_COLS: [&str; 4] = ["mean", "sd", "q2.5", "q97.5"];

fn moments(m: &Moments) -> [String; 4] {
    [num(m.mean), num(m.sd), num(m.q025), num(m.q975)]
}

fn header(lead: &[&str], groups: &[&str]) -> Vec<String> {
    let mut h: Vec<String> = lead.iter().map(|s| s.to_string()).collect();
    for g in groups {
        for c in MOMENT_COLS {
            h.push(format!("{g}_{c}"));
        }
    }
    h
}

fn draw_files(ctx: &Context, args: &ReportArgs) -> Result<Vec<PathBuf>> {
    if !args.draws.is_empty() {
        return Ok(args.draws.clone());
    }
    if let Some(dir) = &args.fit_dir {
        let mut files: Vec<(usize, PathBuf)> = std::fs::read_dir(dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter_map(|p| {
                let name = p.file_name()?.to_str()?;
                let n = name.strip_prefix("draws_chain")?.strip_suffix(".csv")?.parse().ok()?;
                Some((n, p))
            })
            .collect();
        files.sort();
        if files.is_empty() {
            bail!("no draws_chain*.csv files in {}", dir.display());
        }
        return Ok(files.into_iter().map(|f| f.1).collect());
    }
    match &ctx.config.draws {
        Some(d) if !d.is_empty() => Ok(d.clone()),
        _ => bail!("missing input: draws (pass --draws or --fit-dir, or set `draws` in the config)"),
    }
}

pub fn run(ctx: &Context, args: &ReportArgs) -> Result<()> {
    let mut rec = Recorder::new("report", ctx.seed, ctx.config_path.as_deref());
    let files = draw_files(ctx, args)?;
    for f in &files {
        rec.input(f);
    }
    let draws = load_draws(&files)?;
    info!("{} chains, {} draws", draws.chains.len(), draws.n_draws());
    let summary = summarize(&draws)?;
    let mut out = Outputs::new(&ctx.out);
    save_summary(&out.file("summary.csv"), &summary.parameters)?;

    let layout = DrawLayout::from_names(&draws.names)?;
    let all: Vec<&Vec<f64>> = draws.chains.iter().flatten().collect();

    let mut rows = Vec::new();
    for e in &summary.effects {
        let i = layout.beta[&e.age][layout.covariates.iter().position(|c| *c == e.covariate).expect("from layout")];
        let mult: Vec<f64> = all.iter().map(|d| 1.0 + d[i]).collect();
        let mut r = vec![e.age.to_string(), e.covariate.clone()];
        r.extend(moments(&e.reduction_pct));
        r.extend(moments(&describe(&mult)));
        rows.push(r);
    }
    let h = header(&["age_group", "covariate"], &["reduction_pct", "multiplier"]);
    let h: Vec<&str> = h.iter().map(String::as_str).collect();
    out.csv("effects.csv", &h, &rows)?;

    let mut rows = Vec::new();
    for o in &summary.offspring {
        let mut r = vec![o.age.to_string()];
        for m in [&o.r0, &o.psi, &o.infecting_ratio, &o.top_share] {
            r.extend(moments(m));
        }
        rows.push(r);
    }
    let h = header(&["age_group"], &["r0", "psi", "infecting_ratio", "top20_share"]);
    let h: Vec<&str> = h.iter().map(String::as_str).collect();
    out.csv("offspring.csv", &h, &rows)?;

    let panel_given = pick(&args.panel.covariates, &ctx.config.covariates).is_some();
    if panel_given {
        let covs = inputs::covariates(ctx, &args.panel, &mut rec)?.expect("configured");
        let pops = inputs::populations(ctx, &args.panel, &mut rec)?;
        let effects: Vec<EffectSet> = all.iter().map(|d| layout.effects(d)).collect();
        if let Some(first) = effects.first() {
            first.validate_against(&covs)?;
        }
        totals(&layout, &effects, &covs, &pops, &mut out)?;
        if let Some(w) = pick(&args.weather, &ctx.config.weather) {
            rec.input(&w);
            seasonal(&w, &layout, &effects, &covs, &pops, &mut out)?;
        }
    } else {
        info!("no covariate table given; skipping total-effect and seasonal series");
    }
    rec.finish(&ctx.out, &out.files)?;
    Ok(())
}

/// Posterior mean and 95% band of each total-effect series.
fn totals(
    layout: &DrawLayout,
    effects: &[EffectSet],
    covs: &CovariatePanel,
    pops: &Populations,
    out: &mut Outputs,
) -> Result<()> {
    for label in groups::LABELS {
        let members: Vec<&str> = groups::by_label(label)
            .expect("known label")
            .iter()
            .copied()
            .filter(|c| layout.covariates.iter().any(|n| n == c))
            .collect();
        if members.is_empty() {
            info!("no {label} covariates in the fit; skipping its total effect");
            continue;
        }
        let series = effects
            .iter()
            .map(|e| total_effect(e, covs, &members, pops))
            .collect::<spreadfit::Result<Vec<_>>>()?;
        let rows: Vec<Vec<String>> = (0..covs.n_days())
            .map(|t| {
                let v: Vec<f64> = series.iter().map(|s| s[t]).collect();
                let m = describe(&v);
                vec![covs.date(t).to_string(), num(m.mean), num(m.q025), num(m.q975)]
            })
            .collect();
        out.csv(&format!("total_effect_{label}.csv"), &["date", "mean", "q2.5", "q97.5"], &rows)?;
    }
    Ok(())
}

/// Weather-driven multiplier over the year, weighted by national age shares.
fn seasonal(
    weather: &Path,
    layout: &DrawLayout,
    effects: &[EffectSet],
    covs: &CovariatePanel,
    pops: &Populations,
    out: &mut Outputs,
) -> Result<()> {
    let climatology = load_weather(weather)?.climatology();
    let mut weights: BTreeMap<AgeGroup, f64> = BTreeMap::new();
    for (k, p) in pops.iter() {
        if layout.psi.contains_key(&k.age) {
            *weights.entry(k.age).or_default() += p;
        }
    }
    let mut raw = vec![Vec::with_capacity(effects.len()); DAYS_PER_YEAR];
    let mut smooth = vec![Vec::with_capacity(effects.len()); DAYS_PER_YEAR];
    let mut peaks = Vec::with_capacity(effects.len());
    for e in effects {
        let p = seasonal_extrapolation(e, covs.specs(), &climatology, &weights)?;
        for d in 0..DAYS_PER_YEAR {
            raw[d].push(p.raw[d]);
            smooth[d].push(p.smoothed[d]);
        }
        peaks.push(p.peak_ratio);
    }
    if peaks.is_empty() {
        warn!("no draws for the seasonal profile");
        return Ok(());
    }
    let rows: Vec<Vec<String>> = (0..DAYS_PER_YEAR)
        .map(|d| {
            let s = describe(&smooth[d]);
            vec![
                (d + 1).to_string(),
                num(describe(&raw[d]).mean),
                num(s.mean),
                num(s.q025),
                num(s.q975),
            ]
        })
        .collect();
    out.csv(
        "seasonal.csv",
        &["day_of_year", "raw_mean", "smoothed_mean", "smoothed_q2.5", "smoothed_q97.5"],
        &rows,
    )?;
    info!("seasonal peak-to-trough ratio {:.3}", describe(&peaks).mean);
    Ok(())
}

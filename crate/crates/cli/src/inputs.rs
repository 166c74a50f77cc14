//! Resolving and loading the input tables of a command.

use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use chrono::NaiveDate;
use spreadfit::features::{load_cases, load_covariates, load_populations};
use spreadfit::{CaseRecord, CovariatePanel, Panel, Populations};

use crate::config::{pick, require};
use crate::manifest::Recorder;
use crate::{Context, PanelArgs};

pub fn cases_path(ctx: &Context, args: &PanelArgs) -> Result<PathBuf> {
    require(pick(&args.cases, &ctx.config.cases), "cases")
}

pub fn records(path: &Path, rec: &mut Recorder) -> Result<Vec<CaseRecord>> {
    rec.input(path);
    Ok(load_cases(path)?)
}

pub fn populations(ctx: &Context, args: &PanelArgs, rec: &mut Recorder) -> Result<Populations> {
    let path = require(pick(&args.populations, &ctx.config.populations), "populations")?;
    rec.input(&path);
    Ok(load_populations(&path)?)
}

/// The covariate panel when a covariate table is configured.
pub fn covariates(ctx: &Context, args: &PanelArgs, rec: &mut Recorder) -> Result<Option<CovariatePanel>> {
    let Some(path) = pick(&args.covariates, &ctx.config.covariates) else {
        return Ok(None);
    };
    let meta = pick(&args.covariate_meta, &ctx.config.covariate_meta);
    rec.input(&path);
    if let Some(m) = &meta {
        rec.input(m);
    }
    Ok(Some(load_covariates(&path, meta.as_deref())?))
}

/// Panel window: flags, then config, then the covariate table, then the
/// span of onset dates in the line list.
pub fn window(
    ctx: &Context,
    args: &PanelArgs,
    covariates: Option<&CovariatePanel>,
    records: &[CaseRecord],
) -> Result<(NaiveDate, usize)> {
    let onsets = || records.iter().filter_map(|r| r.onset_date);
    let start = pick(&args.start, &ctx.config.start)
        .or_else(|| covariates.filter(|c| c.n_covariates() > 0).map(CovariatePanel::start))
        .or_else(|| onsets().min());
    let Some(start) = start else {
        bail!("cannot infer the panel start: no start given and no dated cases");
    };
    let n_days = pick(&args.n_days, &ctx.config.n_days)
        .or_else(|| covariates.filter(|c| c.n_covariates() > 0).map(CovariatePanel::n_days))
        .or_else(|| onsets().max().map(|end| ((end - start).num_days() + 1).max(0) as usize))
        .unwrap_or(0);
    Ok((start, n_days))
}

/// Line list, populations and covariates aggregated into a fitting panel.
pub fn panel(ctx: &Context, args: &PanelArgs, rec: &mut Recorder) -> Result<(Panel, Vec<CaseRecord>)> {
    let records = records(&cases_path(ctx, args)?, rec)?;
    let pops = populations(ctx, args, rec)?;
    let covs = covariates(ctx, args, rec)?;
    let (start, n_days) = window(ctx, args, covs.as_ref(), &records)?;
    let covs = match covs {
        Some(c) if c.n_covariates() > 0 => c,
        _ => CovariatePanel::empty(start, n_days, pops.locations())?,
    };
    let panel = Panel::from_records(&records, pops, covs, start, n_days, None)?;
    Ok((panel, records))
}

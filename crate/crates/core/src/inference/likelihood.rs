use std::collections::BTreeMap;

use serde::Serialize;

use super::priors::PriorConfig;
use super::state::{log_prior, Cache, FitData, State, S};
use crate::distributions::DelayDistribution;
use crate::effects::{describe_mismatch, EffectSet};
use crate::error::{Error, Result};
use crate::features::Panel;
use crate::model::{LatentInfections, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogPosterior {
    /// Negative binomial terms of the latent infections.
    pub transmission: f64,
    /// Poisson terms of the observed cases.
    pub measurement: f64,
    pub prior: f64,
    pub total: f64,
}

/// Unnormalized log posterior of `params` given `panel`: transmission and
/// measurement terms over the panel window plus all prior terms. Returns a
/// total of `-inf` when an effect factor is non-positive or a count is
/// impossible under its law.
pub fn log_likelihood(params: &ModelParams, panel: &Panel, priors: &PriorConfig) -> Result<LogPosterior> {
    let data = FitData::from_panel(panel)?;
    let state = state_from_params(&data, params, priors)?;
    let prior = log_prior(&data, &state, priors);
    let Some(cache) = Cache::build(&data, &state, params.generation.pmf().to_vec(), params.incubation.pmf().to_vec()) else {
        return Ok(LogPosterior {
            transmission: f64::NEG_INFINITY,
            measurement: f64::NEG_INFINITY,
            prior,
            total: f64::NEG_INFINITY,
        });
    };
    let transmission = cache.transmission();
    let measurement = cache.measurement();
    Ok(LogPosterior {
        transmission,
        measurement,
        prior,
        total: transmission + measurement + prior,
    })
}

pub(crate) fn state_from_params(data: &FitData, params: &ModelParams, priors: &PriorConfig) -> Result<State> {
    let effects = &params.effects;
    let names: Vec<&str> = effects.covariates.iter().map(String::as_str).collect();
    if data.covariates != effects.covariates {
        return Err(Error::CovariateMismatch(describe_mismatch(&data.covariates, &names)));
    }
    let mut r0 = Vec::with_capacity(data.comps.len());
    let mut latent = Vec::with_capacity(data.comps.len());
    let need = S + data.n_days;
    for cd in &data.comps {
        r0.push(
            *effects
                .r0
                .get(&cd.key)
                .ok_or_else(|| Error::DimensionMismatch(format!("no r0 for {}", cd.key)))?,
        );
        let l = params
            .latent
            .get(&cd.key)
            .ok_or_else(|| Error::DimensionMismatch(format!("no latent infections for {}", cd.key)))?;
        if l.start != -(S as i64) || l.infections.len() < need {
            return Err(Error::DimensionMismatch(format!(
                "latent infections for {} must cover days -{S}..{}",
                cd.key, data.n_days
            )));
        }
        latent.push(l.infections[..need].to_vec());
    }
    let beta = data
        .ages
        .iter()
        .map(|a| effects.beta_for(*a).map(<[f64]>::to_vec))
        .collect::<Result<Vec<_>>>()?;
    let psi = data
        .ages
        .iter()
        .map(|a| params.dispersion_for(*a))
        .collect::<Result<Vec<_>>>()?;
    let noise = if priors.noise_enabled() || effects.noise.is_some() {
        data.locations
            .iter()
            .map(|loc| {
                let mut v = vec![0.0; data.n_days];
                if let Some(src) = effects.noise.as_ref().and_then(|n| n.get(loc)) {
                    for (dst, e) in v.iter_mut().zip(src) {
                        *dst = *e;
                    }
                }
                v
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(State {
        r0,
        beta,
        psi,
        mu_gen: params.generation.mean(),
        mu_inc: params.incubation.mean(),
        mu_init: params.init_mean,
        rate: params.reporting_rate,
        noise,
        latent,
    })
}

/// The gamma delay with this mean when it reproduces `pmf`, else `pmf` as is.
fn delay_of(mean: f64, sd: f64, pmf: &[f64]) -> Result<DelayDistribution> {
    match DelayDistribution::gamma(mean, sd, pmf.len()) {
        Ok(d) if d.pmf() == pmf => Ok(d),
        _ => DelayDistribution::from_pmf(pmf.to_vec()),
    }
}

pub(crate) fn params_from_state(
    data: &FitData,
    state: &State,
    priors: &PriorConfig,
    generation: &[f64],
    incubation: &[f64],
) -> Result<ModelParams> {
    let r0 = data
        .comps
        .iter()
        .zip(&state.r0)
        .map(|(cd, r)| (cd.key.clone(), *r))
        .collect();
    let mut effects = EffectSet::new(r0, data.covariates.clone());
    for (a, age) in data.ages.iter().enumerate() {
        effects.beta.insert(*age, state.beta[a].clone());
    }
    effects.noise_sd = priors.noise_sd;
    if !state.noise.is_empty() {
        effects.noise = Some(
            data.locations
                .iter()
                .cloned()
                .zip(state.noise.iter().cloned())
                .collect(),
        );
    }
    let latent: BTreeMap<_, _> = data
        .comps
        .iter()
        .zip(&state.latent)
        .map(|(cd, l)| {
            (
                cd.key.clone(),
                LatentInfections {
                    start: -(S as i64),
                    infections: l.clone(),
                },
            )
        })
        .collect();
    Ok(ModelParams {
        effects,
        dispersion: data.ages.iter().cloned().zip(state.psi.iter().cloned()).collect(),
        reporting_rate: state.rate,
        generation: delay_of(state.mu_gen, priors.delay_sd, generation)?,
        incubation: delay_of(state.mu_inc, priors.delay_sd, incubation)?,
        init_mean: state.mu_init,
        latent,
    })
}

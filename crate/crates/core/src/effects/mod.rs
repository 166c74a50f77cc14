//! Covariates, the multiplicative effect model for R_t, and quantities
//! derived from fitted effects.

mod covariates;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use covariates::{CovariateKind, CovariatePanel, CovariateSpec, Standardization};

use crate::error::{Error, Result};
use crate::model::{AgeGroup, CompartmentKey, Populations};

/// Standard covariate names produced by the feature builder.
pub mod names {
    pub const INCIDENCE_INFO: &str = "incidence_info";
    pub const CUMULATIVE_INCIDENCE: &str = "cumulative_incidence";
    pub const TRACED_RATIO: &str = "traced_ratio";
    pub const TEMPERATURE: &str = "temperature";
    pub const HUMIDITY: &str = "humidity";
    pub const HOLIDAY: &str = "holiday";
    pub const WEEKDAYS: [&str; 6] = ["tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"];
}

/// Covariate groups for the total-effect panels.
pub mod groups {
    use super::names;

    pub const TRACING: [&str; 1] = [names::TRACED_RATIO];
    pub const INFORMATION: [&str; 1] = [names::INCIDENCE_INFO];
    pub const SEASON: [&str; 2] = [names::TEMPERATURE, names::HUMIDITY];

    pub fn by_label(label: &str) -> Option<&'static [&'static str]> {
        match label {
            "tracing" => Some(&TRACING),
            "information" => Some(&INFORMATION),
            "season" => Some(&SEASON),
            _ => None,
        }
    }

    pub const LABELS: [&str; 3] = ["tracing", "information", "season"];
}

/// Baseline reproductive numbers, covariate effects and the optional
/// per-(location, day) multiplicative error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSet {
    pub r0: BTreeMap<CompartmentKey, f64>,
    /// Covariate order shared by every `beta` vector.
    pub covariates: Vec<String>,
    pub beta: BTreeMap<AgeGroup, Vec<f64>>,
    /// Error terms per location, indexed by panel day. Shared by the age
    /// groups of a location.
    pub noise: Option<BTreeMap<String, Vec<f64>>>,
    pub noise_sd: f64,
}

impl EffectSet {
    /// R0 per compartment and zero effects for `covariates`.
    pub fn new(r0: BTreeMap<CompartmentKey, f64>, covariates: Vec<String>) -> Self {
        let mut beta = BTreeMap::new();
        for key in r0.keys() {
            beta.entry(key.age).or_insert_with(|| vec![0.0; covariates.len()]);
        }
        Self {
            r0,
            covariates,
            beta,
            noise: None,
            noise_sd: 0.0,
        }
    }

    pub fn beta_for(&self, age: AgeGroup) -> Result<&[f64]> {
        self.beta
            .get(&age)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::invalid(format!("beta[{age}]"), "missing"))
    }

    pub fn noise_at(&self, location: &str, day: usize) -> f64 {
        self.noise
            .as_ref()
            .and_then(|n| n.get(location))
            .and_then(|v| v.get(day))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn check_shape(&self) -> Result<()> {
        for (key, r0) in &self.r0 {
            if !(*r0 > 0.0 && r0.is_finite()) {
                return Err(Error::invalid(format!("r0[{key}]"), format!("must be positive, got {r0}")));
            }
            let beta = self.beta_for(key.age)?;
            if beta.len() != self.covariates.len() {
                return Err(Error::DimensionMismatch(format!(
                    "beta[{}] has {} entries for {} covariates",
                    key.age,
                    beta.len(),
                    self.covariates.len()
                )));
            }
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::invalid("noise_sd", "must be non-negative"));
        }
        if let Some(noise) = &self.noise {
            for (loc, values) in noise {
                if let Some((day, e)) = values.iter().enumerate().find(|(_, e)| !(**e > -1.0)) {
                    return Err(Error::NonPositiveRate {
                        covariate: format!("noise[{loc}|{day}]"),
                        factor: 1.0 + e,
                    });
                }
            }
        }
        Ok(())
    }

    /// Checks covariate names against `panel` and that every effect factor
    /// stays positive over each location's observed covariate range.
    pub fn validate_against(&self, panel: &CovariatePanel) -> Result<()> {
        self.check_shape()?;
        let panel_names = panel.names();
        if panel_names != self.covariates.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::CovariateMismatch(describe_mismatch(&self.covariates, &panel_names)));
        }
        for key in self.r0.keys() {
            let Some(loc) = panel.location_index(&key.location) else {
                continue;
            };
            let beta = self.beta_for(key.age)?;
            for (j, b) in beta.iter().enumerate() {
                if let Some((lo, hi)) = panel.range_at(loc, j) {
                    for x in [lo, hi] {
                        let factor = 1.0 + b * x;
                        if !(factor > 0.0) {
                            return Err(Error::NonPositiveRate {
                                covariate: self.covariates[j].clone(),
                                factor,
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn describe_mismatch(expected: &[String], found: &[&str]) -> String {
    let missing: Vec<&str> = expected
        .iter()
        .map(String::as_str)
        .filter(|n| !found.contains(n))
        .collect();
    let extra: Vec<&str> = found
        .iter()
        .copied()
        .filter(|n| !expected.iter().any(|e| e == n))
        .collect();
    if missing.is_empty() && extra.is_empty() {
        format!("same covariates in a different order: expected [{}]", expected.join(", "))
    } else {
        format!("missing [{}], unexpected [{}]", missing.join(", "), extra.join(", "))
    }
}

/// Product of `(1 + beta_j * x_j)`; fails on the first non-positive factor.
#[inline]
pub fn effect_multiplier(beta: &[f64], x: &[f64], names: &[String]) -> Result<f64> {
    let mut m = 1.0;
    for (j, (b, v)) in beta.iter().zip(x).enumerate() {
        let factor = 1.0 + b * v;
        if !(factor > 0.0) {
            return Err(Error::NonPositiveRate {
                covariate: names.get(j).cloned().unwrap_or_else(|| j.to_string()),
                factor,
            });
        }
        m *= factor;
    }
    Ok(m)
}

/// R for compartment `key` on panel day `day` given its covariate row `x`.
pub fn reproductive_number(effects: &EffectSet, x: &[f64], key: &CompartmentKey, day: usize) -> Result<f64> {
    let r0 = *effects
        .r0
        .get(key)
        .ok_or_else(|| Error::invalid(format!("r0[{key}]"), "missing"))?;
    let beta = effects.beta_for(key.age)?;
    if x.len() != beta.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} covariate values for {} effects",
            x.len(),
            beta.len()
        )));
    }
    if let Some(j) = x.iter().position(|v| v.is_nan()) {
        return Err(Error::MissingCovariate {
            compartment: key.to_string(),
            day: day.to_string(),
            covariate: effects.covariates[j].clone(),
        });
    }
    let m = effect_multiplier(beta, x, &effects.covariates)?;
    let eps = effects.noise_at(&key.location, day);
    if !(1.0 + eps > 0.0) {
        return Err(Error::NonPositiveRate {
            covariate: format!("noise[{}|{day}]", key.location),
            factor: 1.0 + eps,
        });
    }
    Ok(r0 * m * (1.0 + eps))
}

/// Per-day multiplier of the covariates in `group`, averaged over locations
/// and population-weighted over the age groups present for each location.
pub fn total_effect(
    effects: &EffectSet,
    panel: &CovariatePanel,
    group: &[&str],
    populations: &Populations,
) -> Result<Vec<f64>> {
    if group.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let cols = group
        .iter()
        .map(|name| {
            effects
                .covariates
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| Error::UnknownCovariate(name.to_string()))
                .and_then(|k| panel.index_of(name).map(|j| (k, j)))
        })
        .collect::<Result<Vec<(usize, usize)>>>()?;

    let mut by_location: BTreeMap<&str, Vec<AgeGroup>> = BTreeMap::new();
    for key in effects.r0.keys() {
        by_location.entry(key.location.as_str()).or_default().push(key.age);
    }
    let mut units = Vec::new();
    for (location, ages) in &by_location {
        let Some(loc) = panel.location_index(location) else {
            continue;
        };
        let weights = populations.age_weights(location, ages)?;
        let betas = ages
            .iter()
            .map(|a| effects.beta_for(*a))
            .collect::<Result<Vec<_>>>()?;
        units.push((*location, loc, weights, betas));
    }
    if units.is_empty() {
        return Err(Error::DimensionMismatch("no effect location appears in the covariate panel".into()));
    }

    let mut out = Vec::with_capacity(panel.n_days());
    for day in 0..panel.n_days() {
        let mut total = 0.0;
        for (location, loc, weights, betas) in &units {
            let row = panel.row(*loc, day);
            let mut m = 0.0;
            for (w, beta) in weights.iter().zip(betas) {
                let mut prod = 1.0;
                for &(k, j) in &cols {
                    let x = row[j];
                    if x.is_nan() {
                        return Err(Error::MissingCovariate {
                            compartment: location.to_string(),
                            day: panel.date(day).to_string(),
                            covariate: effects.covariates[k].clone(),
                        });
                    }
                    prod *= 1.0 + beta[k] * x;
                }
                m += w * prod;
            }
            total += m;
        }
        out.push(total / units.len() as f64);
    }
    Ok(out)
}

/// Reduction of individual secondary infections implied by a tracing effect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TracingExtrapolation {
    pub reduction: f64,
    /// The raw ratio exceeded 1 and was capped.
    pub truncated: bool,
    /// False when the effect estimate was not protective.
    pub protective: bool,
}

pub fn individual_tracing_effect(beta_trace: f64, reporting_rate: f64) -> Result<TracingExtrapolation> {
    if !(reporting_rate > 0.0 && reporting_rate <= 1.0) {
        return Err(Error::invalid("reporting_rate", format!("must lie in (0, 1], got {reporting_rate}")));
    }
    if !(beta_trace < 0.0) {
        return Ok(TracingExtrapolation {
            reduction: 0.0,
            truncated: false,
            protective: false,
        });
    }
    let raw = -beta_trace / reporting_rate;
    Ok(TracingExtrapolation {
        reduction: raw.min(1.0),
        truncated: raw > 1.0,
        protective: true,
    })
}

pub const DAYS_PER_YEAR: usize = 365;
pub const SEASONAL_WINDOW: usize = 14;

/// Raw daily temperature (°C) and relative humidity (%) by day of year
/// (index 0 = 1 January). Missing days are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct Climatology {
    pub temperature: Vec<f64>,
    pub humidity: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeasonalProfile {
    pub raw: Vec<f64>,
    /// Centred 14-day rolling mean, wrapping around the year.
    pub smoothed: Vec<f64>,
    /// Largest over smallest smoothed multiplier.
    pub peak_ratio: f64,
}

/// Weather-only multiplier over the year. Effects on standardized weather
/// covariates are mapped back through the stored standardization of `specs`;
/// weather covariates absent from `effects` contribute a factor of 1.
pub fn seasonal_extrapolation(
    effects: &EffectSet,
    specs: &[CovariateSpec],
    climatology: &Climatology,
    age_weights: &BTreeMap<AgeGroup, f64>,
) -> Result<SeasonalProfile> {
    for series in [&climatology.temperature, &climatology.humidity] {
        if series.len() < DAYS_PER_YEAR {
            return Err(Error::MissingClimatology(series.len() as u32 + 1));
        }
        if let Some(d) = series[..DAYS_PER_YEAR].iter().position(|v| v.is_nan()) {
            return Err(Error::MissingClimatology(d as u32 + 1));
        }
    }
    let wsum: f64 = age_weights.values().sum();
    if age_weights.is_empty() || !(wsum > 0.0) {
        return Err(Error::invalid("age_weights", "need at least one positive weight"));
    }

    let mut terms = Vec::new();
    for (name, series) in [
        (names::TEMPERATURE, &climatology.temperature),
        (names::HUMIDITY, &climatology.humidity),
    ] {
        let Some(k) = effects.covariates.iter().position(|c| c == name) else {
            continue;
        };
        let stats = specs.iter().find(|s| s.name == name).and_then(|s| s.stats);
        terms.push((k, series, stats));
    }

    let mut raw = Vec::with_capacity(DAYS_PER_YEAR);
    for d in 0..DAYS_PER_YEAR {
        let mut m = 0.0;
        for (age, w) in age_weights {
            let beta = effects.beta_for(*age)?;
            let mut prod = 1.0;
            for (k, series, stats) in &terms {
                let x = stats.map_or(series[d], |s| s.apply(series[d]));
                let factor = 1.0 + beta[*k] * x;
                if !(factor > 0.0) {
                    return Err(Error::NonPositiveRate {
                        covariate: effects.covariates[*k].clone(),
                        factor,
                    });
                }
                prod *= factor;
            }
            m += w / wsum * prod;
        }
        raw.push(m);
    }

    let half = SEASONAL_WINDOW / 2;
    let smoothed: Vec<f64> = (0..DAYS_PER_YEAR)
        .map(|d| {
            (0..SEASONAL_WINDOW)
                .map(|o| raw[(d + DAYS_PER_YEAR + o - half) % DAYS_PER_YEAR])
                .sum::<f64>()
                / SEASONAL_WINDOW as f64
        })
        .collect();
    let max = smoothed.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = smoothed.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(SeasonalProfile {
        raw,
        smoothed,
        peak_ratio: max / min,
    })
}

//! Posterior tables and growth-variance algebra.

use std::collections::BTreeMap;

use serde::Serialize;

use super::diagnostics::{describe, Moments};
use super::sampler::PosteriorDraws;
use crate::distributions::offspring_summary;
use crate::effects::EffectSet;
use crate::error::{Error, Result};
use crate::model::{AgeGroup, CompartmentKey};
use crate::renewal::Variant;

/// Reproductive number at which offspring statistics are tabulated.
pub const TABLE_R: f64 = 1.0;
/// Fraction of most infectious cases behind the top-share column.
pub const TABLE_Q: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterSummary {
    pub parameter: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
    pub rhat: Option<f64>,
}

/// One row of the per-age offspring table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OffspringRow {
    pub age: AgeGroup,
    /// Baseline reproductive number averaged over locations, per draw.
    pub r0: Moments,
    pub psi: Moments,
    pub infecting_ratio: Moments,
    pub top_share: Moments,
}

/// Percentage change in transmission when a covariate rises by one unit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectRow {
    pub age: AgeGroup,
    pub covariate: String,
    pub reduction_pct: Moments,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosteriorSummary {
    pub parameters: Vec<ParameterSummary>,
    pub offspring: Vec<OffspringRow>,
    pub effects: Vec<EffectRow>,
}

/// Positions of the structured parameters within a draw vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawLayout {
    pub r0: Vec<(CompartmentKey, usize)>,
    pub covariates: Vec<String>,
    /// `beta[age][covariate]` index.
    pub beta: BTreeMap<AgeGroup, Vec<usize>>,
    pub psi: BTreeMap<AgeGroup, usize>,
}

fn bracket<'a>(name: &'a str, prefix: &str) -> Option<&'a str> {
    name.strip_prefix(prefix)?.strip_prefix('[')?.strip_suffix(']')
}

fn split_pair(inner: &str) -> Result<(&str, &str)> {
    inner
        .rsplit_once('|')
        .ok_or_else(|| Error::DimensionMismatch(format!("malformed parameter name `{inner}`")))
}

impl DrawLayout {
    pub fn from_names(names: &[String]) -> Result<Self> {
        let mut r0 = Vec::new();
        let mut covariates: Vec<String> = Vec::new();
        let mut beta_idx: BTreeMap<(AgeGroup, String), usize> = BTreeMap::new();
        let mut psi = BTreeMap::new();
        for (i, name) in names.iter().enumerate() {
            if let Some(inner) = bracket(name, "r0") {
                let (loc, age) = split_pair(inner)?;
                r0.push((CompartmentKey::new(loc, age.parse()?), i));
            } else if let Some(inner) = bracket(name, "beta") {
                let (age, cov) = inner
                    .split_once('|')
                    .ok_or_else(|| Error::DimensionMismatch(format!("malformed parameter name `{name}`")))?;
                if !covariates.iter().any(|c| c == cov) {
                    covariates.push(cov.to_string());
                }
                beta_idx.insert((age.parse()?, cov.to_string()), i);
            } else if let Some(age) = bracket(name, "psi") {
                psi.insert(age.parse()?, i);
            }
        }
        let mut beta: BTreeMap<AgeGroup, Vec<usize>> = BTreeMap::new();
        for age in r0.iter().map(|(k, _)| k.age).chain(psi.keys().copied()) {
            if beta.contains_key(&age) {
                continue;
            }
            let idx = covariates
                .iter()
                .map(|c| {
                    beta_idx
                        .get(&(age, c.clone()))
                        .copied()
                        .ok_or_else(|| Error::DimensionMismatch(format!("no draws for beta[{age}|{c}]")))
                })
                .collect::<Result<Vec<_>>>()?;
            beta.insert(age, idx);
        }
        Ok(Self {
            r0,
            covariates,
            beta,
            psi,
        })
    }

    /// Effect set of one draw, without error terms.
    pub fn effects(&self, draw: &[f64]) -> EffectSet {
        let r0 = self.r0.iter().map(|(k, i)| (k.clone(), draw[*i])).collect();
        let mut e = EffectSet::new(r0, self.covariates.clone());
        for (age, idx) in &self.beta {
            e.beta.insert(*age, idx.iter().map(|i| draw[*i]).collect());
        }
        e
    }

    /// Baseline reproductive number of `age` averaged over locations.
    pub fn mean_r0(&self, age: AgeGroup, draw: &[f64]) -> Option<f64> {
        let v: Vec<f64> = self.r0.iter().filter(|(k, _)| k.age == age).map(|(_, i)| draw[*i]).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Posterior moments of every stored scalar plus the offspring and effect tables.
pub fn summarize(draws: &PosteriorDraws) -> Result<PosteriorSummary> {
    if draws.n_draws() == 0 {
        return Err(Error::Config("no posterior draws to summarize".into()));
    }
    let parameters = draws
        .names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let m = describe(&draws.pooled(i));
            ParameterSummary {
                parameter: name.clone(),
                mean: m.mean,
                sd: m.sd,
                q025: m.q025,
                q975: m.q975,
                rhat: draws.rhat.get(i).copied().flatten(),
            }
        })
        .collect();

    let layout = DrawLayout::from_names(&draws.names)?;
    let all: Vec<&Vec<f64>> = draws.chains.iter().flatten().collect();
    let mut offspring = Vec::new();
    for (age, &pi) in &layout.psi {
        let mut r0 = Vec::with_capacity(all.len());
        let mut psi = Vec::with_capacity(all.len());
        let mut ratio = Vec::with_capacity(all.len());
        let mut top = Vec::with_capacity(all.len());
        for d in &all {
            let s = offspring_summary(TABLE_R, d[pi], TABLE_Q)?;
            if let Some(r) = layout.mean_r0(*age, d) {
                r0.push(r);
            }
            psi.push(d[pi]);
            ratio.push(s.infecting_ratio);
            top.push(s.top_share);
        }
        offspring.push(OffspringRow {
            age: *age,
            r0: describe(&r0),
            psi: describe(&psi),
            infecting_ratio: describe(&ratio),
            top_share: describe(&top),
        });
    }
    let mut effects = Vec::new();
    for (age, idx) in &layout.beta {
        for (cov, &i) in layout.covariates.iter().zip(idx) {
            let pct: Vec<f64> = all.iter().map(|d| -100.0 * d[i]).collect();
            effects.push(EffectRow {
                age: *age,
                covariate: cov.clone(),
                reduction_pct: describe(&pct),
            });
        }
    }
    Ok(PosteriorSummary {
        parameters,
        offspring,
        effects,
    })
}

/// Variance of the one-step growth rate `i_t / L_t` at load `load`.
pub fn predicted_growth_variance(r: f64, psi: f64, load: f64, variant: Variant) -> Result<f64> {
    if !(load > 0.0) || !(r > 0.0) || !(psi > 0.0) {
        return Err(Error::invalid("growth variance", "r, psi and load must be positive"));
    }
    Ok(match variant {
        Variant::PerIndividual => r * (psi + r) / (load * psi),
        Variant::Constant => r / load + r * r / psi,
    })
}

/// Dispersion implied by a growth-rate variance; inverse of
/// [`predicted_growth_variance`].
pub fn dispersion_from_growth_variance(r: f64, variance: f64, load: f64, variant: Variant) -> Result<f64> {
    if !(load > 0.0) || !(r > 0.0) || !(variance >= 0.0) {
        return Err(Error::invalid("growth variance", "r and load must be positive, variance non-negative"));
    }
    let excess = match variant {
        Variant::PerIndividual => variance * load - r,
        Variant::Constant => variance - r / load,
    };
    if !(excess > 0.0) {
        return Err(Error::Underdispersed(variance * load / r));
    }
    Ok(r * r / excess)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn growth_variance_values() {
        let v = predicted_growth_variance(2.5, 0.2, 100.0, Variant::PerIndividual).unwrap();
        assert!((v - 2.5 * 2.7 / 20.0).abs() < 1e-12);
        assert!(predicted_growth_variance(2.5, 0.2, 1e12, Variant::PerIndividual).unwrap() < 1e-9);
        let floor = predicted_growth_variance(2.5, 0.2, 1e12, Variant::Constant).unwrap();
        assert!((floor - 31.25).abs() < 1e-9);
    }

    #[test]
    fn growth_variance_round_trip() {
        for variant in [Variant::PerIndividual, Variant::Constant] {
            for (r, psi, load) in [(1.0, 0.25, 300.0), (2.5, 0.2, 50.0), (0.8, 5.0, 1000.0)] {
                let v = predicted_growth_variance(r, psi, load, variant).unwrap();
                let back = dispersion_from_growth_variance(r, v, load, variant).unwrap();
                assert!((back - psi).abs() < 1e-9 * psi, "{variant:?} {back} vs {psi}");
            }
        }
        assert!(matches!(
            dispersion_from_growth_variance(1.0, 0.0, 100.0, Variant::PerIndividual),
            Err(Error::Underdispersed(_))
        ));
    }

    fn toy_draws(values: Vec<Vec<f64>>) -> PosteriorDraws {
        let names = vec![
            "r0[a|15-34]".to_string(),
            "r0[b|15-34]".to_string(),
            "beta[15-34|holiday]".to_string(),
            "psi[15-34]".to_string(),
        ];
        let half = values.len() / 2;
        PosteriorDraws {
            monitored: vec![true; names.len()],
            rhat: vec![None; names.len()],
            names,
            chains: vec![values[..half].to_vec(), values[half..].to_vec()],
            acceptance: BTreeMap::new(),
            n_burn: 0,
            n_keep: half,
            thin: 1,
            final_params: Vec::new(),
        }
    }

    #[test]
    fn degenerate_draws_collapse() {
        let s = summarize(&toy_draws(vec![vec![2.0, 3.0, -0.5, 0.75]; 8])).unwrap();
        for p in &s.parameters {
            assert_eq!(p.sd, 0.0);
            assert_eq!(p.q025, p.q975);
        }
        assert_eq!(s.effects[0].reduction_pct.mean, 50.0);
        assert_eq!(s.offspring[0].r0.mean, 2.5);
    }

    #[test]
    fn offspring_columns_match_per_draw_oracle() {
        let draws: Vec<Vec<f64>> = (0..10).map(|i| vec![2.0, 2.0, 0.0, 0.2 + 0.3 * i as f64]).collect();
        let s = summarize(&toy_draws(draws.clone())).unwrap();
        let expect: Vec<f64> = draws
            .iter()
            .map(|d| offspring_summary(1.0, d[3], 0.2).unwrap().infecting_ratio)
            .collect();
        let mean = expect.iter().sum::<f64>() / expect.len() as f64;
        assert!((s.offspring[0].infecting_ratio.mean - mean).abs() < 1e-12);
    }
}

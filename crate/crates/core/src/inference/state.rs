//! Flattened model state with cached per-day terms, shared by the likelihood
//! and the sampler.

use chrono::NaiveDate;

use super::priors::{ln_seed_pmf, seed_day_mean, PriorConfig};
use crate::distributions::DelayDistribution;
use crate::error::{Error, Result};
use crate::features::Panel;
use crate::model::{AgeGroup, CompartmentKey, SEED_DAYS};

pub(crate) const S: usize = SEED_DAYS;

pub(crate) struct CompData {
    pub key: CompartmentKey,
    pub loc: usize,
    pub age: usize,
    pub cases: Vec<u64>,
    pub ln_fact: Vec<f64>,
}

/// Panel data reorganized for fast access.
pub(crate) struct FitData {
    pub start: NaiveDate,
    pub n_days: usize,
    pub comps: Vec<CompData>,
    pub locations: Vec<String>,
    pub ages: Vec<AgeGroup>,
    pub covariates: Vec<String>,
    /// `x[loc][t * J + j]`
    pub x: Vec<Vec<f64>>,
    pub by_age: Vec<Vec<usize>>,
    pub by_loc: Vec<Vec<usize>>,
}

impl FitData {
    pub fn from_panel(panel: &Panel) -> Result<Self> {
        panel.validate()?;
        let locations: Vec<String> = panel.locations().into_iter().map(str::to_string).collect();
        let mut ages: Vec<AgeGroup> = panel.keys.iter().map(|k| k.age).collect();
        ages.sort();
        ages.dedup();
        let covariates: Vec<String> = panel.covariates.names().into_iter().map(str::to_string).collect();
        let j = covariates.len();
        let mut x = Vec::with_capacity(locations.len());
        for loc in &locations {
            let mut row = vec![0.0; panel.n_days * j];
            if j > 0 {
                let l = panel
                    .covariates
                    .location_index(loc)
                    .ok_or_else(|| Error::Config(format!("location `{loc}` missing from covariates")))?;
                for t in 0..panel.n_days {
                    row[t * j..(t + 1) * j].copy_from_slice(panel.covariates.row(l, t));
                }
            }
            x.push(row);
        }
        let mut comps = Vec::with_capacity(panel.keys.len());
        let mut by_age = vec![Vec::new(); ages.len()];
        let mut by_loc = vec![Vec::new(); locations.len()];
        for (c, key) in panel.keys.iter().enumerate() {
            let loc = locations.iter().position(|l| *l == key.location).unwrap_or(0);
            let age = ages.iter().position(|a| *a == key.age).unwrap_or(0);
            by_age[age].push(c);
            by_loc[loc].push(c);
            comps.push(CompData {
                key: key.clone(),
                loc,
                age,
                ln_fact: panel.cases[c].iter().map(|&n| ln_fact(n)).collect(),
                cases: panel.cases[c].clone(),
            });
        }
        Ok(Self {
            start: panel.start,
            n_days: panel.n_days,
            comps,
            locations,
            ages,
            covariates,
            x,
            by_age,
            by_loc,
        })
    }

    pub fn n_cov(&self) -> usize {
        self.covariates.len()
    }

    #[inline]
    pub fn xrow(&self, loc: usize, t: usize) -> &[f64] {
        let j = self.covariates.len();
        &self.x[loc][t * j..(t + 1) * j]
    }

    /// `prod_j (1 + beta_j x_j)` per day at `loc`; `None` if any factor is non-positive.
    pub fn effect_series(&self, beta: &[f64], loc: usize) -> Option<Vec<f64>> {
        let mut out = Vec::with_capacity(self.n_days);
        for t in 0..self.n_days {
            let mut m = 1.0;
            for (b, x) in beta.iter().zip(self.xrow(loc, t)) {
                let f = 1.0 + b * x;
                if !(f > 0.0) {
                    return None;
                }
                m *= f;
            }
            out.push(m);
        }
        Some(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct State {
    pub r0: Vec<f64>,
    /// `[age][covariate]`
    pub beta: Vec<Vec<f64>>,
    pub psi: Vec<f64>,
    pub mu_gen: f64,
    pub mu_inc: f64,
    pub mu_init: f64,
    pub rate: f64,
    /// `[loc][day]`; empty when the error term is disabled.
    pub noise: Vec<Vec<f64>>,
    /// `[comp][SEED_DAYS + day]`
    pub latent: Vec<Vec<u64>>,
}

impl State {
    #[inline]
    pub fn noise_factor(&self, loc: usize, t: usize) -> f64 {
        match self.noise.get(loc) {
            Some(v) if !v.is_empty() => 1.0 + v[t],
            _ => 1.0,
        }
    }
}

/// Per-(compartment, day) quantities derived from a [`State`].
///
/// Transmission terms are stored without the `-ln i_t!` part, which lives in
/// `lnfact`; the negative binomial log-pmf then reads
/// `ln Γ(i + φ) - ln Γ(φ) - φ a + i b` with `φ = Ψ L` and `(a, b)` from
/// [`nb_coefs`], which do not depend on the load.
#[derive(Debug, Clone)]
pub(crate) struct Cache {
    pub gen: Vec<f64>,
    pub inc: Vec<f64>,
    /// `[age][loc][day]`
    pub eff: Vec<Vec<Vec<f64>>>,
    pub load: Vec<Vec<f64>>,
    pub rt: Vec<Vec<f64>>,
    pub coef: Vec<Vec<(f64, f64)>>,
    pub nb: Vec<Vec<f64>>,
    /// `ln i_t!` of the latent infections inside the window.
    pub lnfact: Vec<Vec<f64>>,
    /// Incubation convolution of latent infections, before the reporting rate.
    pub conv: Vec<Vec<f64>>,
    pub pois: Vec<Vec<f64>>,
}

/// `sum_{l>=1} pmf[l-1] * series[j - l]` over indices inside the series.
#[inline]
pub(crate) fn conv_at(series: &[u64], pmf: &[f64], j: usize) -> f64 {
    let mut acc = 0.0;
    let lags = pmf.len().min(j);
    for l in 1..=lags {
        acc += pmf[l - 1] * series[j - l] as f64;
    }
    acc
}

#[inline]
pub(crate) fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

#[inline]
pub(crate) fn ln_fact(n: u64) -> f64 {
    if n < 2 {
        0.0
    } else {
        ln_gamma(n as f64 + 1.0)
    }
}

/// `(ln(1 + R/Ψ), ln(R / (R + Ψ)))`.
#[inline]
pub(crate) fn nb_coefs(r: f64, psi: f64) -> (f64, f64) {
    let a = (r / psi).ln_1p();
    (a, (r / psi).ln() - a)
}

/// Negative binomial log-pmf of `count` at dispersion `phi` without `-ln count!`.
#[inline]
pub(crate) fn nb_core(count: u64, phi: f64, coef: (f64, f64)) -> f64 {
    if !(phi > 0.0) {
        return if count == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if count == 0 {
        return -phi * coef.0;
    }
    let k = count as f64;
    let rising = if count < 8 {
        let mut acc = 1.0;
        for i in 0..count {
            acc *= phi + i as f64;
        }
        acc.ln()
    } else {
        ln_gamma(k + phi) - ln_gamma(phi)
    };
    rising - phi * coef.0 + k * coef.1
}

#[inline]
pub(crate) fn pois_term(count: u64, ln_fact: f64, lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return if count == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    count as f64 * lambda.ln() - lambda - ln_fact
}

impl Cache {
    pub fn build(data: &FitData, state: &State, gen: Vec<f64>, inc: Vec<f64>) -> Option<Self> {
        let mut eff = Vec::with_capacity(data.ages.len());
        for a in 0..data.ages.len() {
            let mut per_loc = Vec::with_capacity(data.locations.len());
            for l in 0..data.locations.len() {
                per_loc.push(data.effect_series(&state.beta[a], l)?);
            }
            eff.push(per_loc);
        }
        let n = data.comps.len();
        let mut cache = Cache {
            gen,
            inc,
            eff,
            load: vec![Vec::new(); n],
            rt: vec![Vec::new(); n],
            coef: vec![Vec::new(); n],
            nb: vec![Vec::new(); n],
            lnfact: vec![Vec::new(); n],
            conv: vec![Vec::new(); n],
            pois: vec![Vec::new(); n],
        };
        for c in 0..n {
            cache.refresh_transmission(data, state, c);
            cache.refresh_measurement(data, state, c);
        }
        Some(cache)
    }

    #[inline]
    pub fn rt_value(&self, data: &FitData, state: &State, c: usize, t: usize) -> f64 {
        let cd = &data.comps[c];
        state.r0[c] * self.eff[cd.age][cd.loc][t] * state.noise_factor(cd.loc, t)
    }

    pub fn refresh_transmission(&mut self, data: &FitData, state: &State, c: usize) {
        let cd = &data.comps[c];
        let lat = &state.latent[c];
        let psi = state.psi[cd.age];
        let n = data.n_days;
        let (mut load, mut rt, mut coef, mut nb, mut lf) = (
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
        );
        for t in 0..n {
            let l = conv_at(lat, &self.gen, S + t);
            let r = self.rt_value(data, state, c, t);
            let k = nb_coefs(r, psi);
            nb.push(nb_core(lat[S + t], psi * l, k));
            lf.push(ln_fact(lat[S + t]));
            load.push(l);
            rt.push(r);
            coef.push(k);
        }
        self.load[c] = load;
        self.rt[c] = rt;
        self.coef[c] = coef;
        self.nb[c] = nb;
        self.lnfact[c] = lf;
    }

    pub fn refresh_measurement(&mut self, data: &FitData, state: &State, c: usize) {
        let cd = &data.comps[c];
        let lat = &state.latent[c];
        let mut conv = Vec::with_capacity(data.n_days);
        let mut pois = Vec::with_capacity(data.n_days);
        for t in 0..data.n_days {
            let v = conv_at(lat, &self.inc, S + t);
            pois.push(pois_term(cd.cases[t], cd.ln_fact[t], state.rate * v));
            conv.push(v);
        }
        self.conv[c] = conv;
        self.pois[c] = pois;
    }

    pub fn transmission(&self) -> f64 {
        self.nb.iter().flatten().sum::<f64>() - self.lnfact.iter().flatten().sum::<f64>()
    }

    pub fn measurement(&self) -> f64 {
        self.pois.iter().flatten().sum()
    }
}

/// Log prior density of every parameter, including the seeded infections.
pub(crate) fn log_prior(data: &FitData, state: &State, priors: &PriorConfig) -> f64 {
    let mut lp = 0.0;
    for r in &state.r0 {
        lp += priors.ln_r0(*r);
    }
    for b in state.beta.iter().flatten() {
        lp += priors.ln_beta(*b);
    }
    for p in &state.psi {
        lp += priors.ln_dispersion(*p);
    }
    lp += priors.ln_delay_mean(state.mu_gen) + priors.ln_delay_mean(state.mu_inc);
    lp += priors.ln_init_mean(state.mu_init);
    lp += priors.ln_reporting_rate(state.rate);
    if priors.noise_enabled() {
        for e in state.noise.iter().flatten() {
            lp += priors.ln_noise(*e);
        }
    }
    lp + seed_prior(data, state, state.mu_init)
}

pub(crate) fn seed_prior(data: &FitData, state: &State, mu_init: f64) -> f64 {
    let m = seed_day_mean(mu_init);
    let mut lp = 0.0;
    for c in 0..data.comps.len() {
        for &i in &state.latent[c][..S] {
            lp += ln_seed_pmf(i, m);
        }
    }
    lp
}

pub(crate) fn delay_pmf(mean: f64, sd: f64, l_max: usize) -> Option<Vec<f64>> {
    DelayDistribution::gamma(mean, sd, l_max).ok().map(|d| d.pmf().to_vec())
}

//! Metropolis-within-Gibbs over parameters and latent infections.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Geometric, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::diagnostics::split_rhat;
use super::likelihood::{params_from_state, state_from_params};
use super::priors::{ln_seed_pmf, seed_day_mean, PriorConfig};
use super::state::{
    conv_at, delay_pmf, ln_fact, log_prior, nb_coefs, nb_core, pois_term, seed_prior, Cache, FitData, State, S,
};
use crate::distributions::default_lag_cap;
use crate::error::{Error, Result};
use crate::features::Panel;
use crate::model::ModelParams;
use crate::rng::{stream_rng, SimRng};

/// Attempts at drawing a starting point with finite posterior density.
pub const INIT_ATTEMPTS: usize = 100;
/// Acceptance rate the proposal scales are tuned towards during burn-in.
pub const TARGET_ACCEPTANCE: f64 = 0.3;
/// Burn-in iterations between refits of the joint-move covariance.
const BLOCK_REFIT: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    R0,
    Beta,
    Dispersion,
    Noise,
    GenerationMean,
    IncubationMean,
    InitMean,
    ReportingRate,
    Latent,
}

impl Block {
    pub const ALL: [Block; 9] = [
        Block::R0,
        Block::Beta,
        Block::Dispersion,
        Block::Noise,
        Block::GenerationMean,
        Block::IncubationMean,
        Block::InitMean,
        Block::ReportingRate,
        Block::Latent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Block::R0 => "r0",
            Block::Beta => "beta",
            Block::Dispersion => "psi",
            Block::Noise => "noise",
            Block::GenerationMean => "mu_gen",
            Block::IncubationMean => "mu_inc",
            Block::InitMean => "mu_init",
            Block::ReportingRate => "reporting_rate",
            Block::Latent => "latent",
        }
    }

    pub fn parse(s: &str) -> Result<Block> {
        Block::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown parameter block `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub n_chains: usize,
    pub n_burn: usize,
    /// Iterations after burn-in; every `thin`-th is stored.
    pub n_keep: usize,
    pub thin: usize,
    pub seed: u64,
    /// Blocks held at their starting values.
    pub frozen: Vec<Block>,
    /// Store latent infections and include them in convergence checks.
    pub monitor_latent: bool,
    /// Starting point; drawn per chain when absent. Required for frozen blocks
    /// other than the latent infections.
    pub initial: Option<ModelParams>,
    /// Log progress every this many iterations (0 disables).
    pub progress_every: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_chains: 2,
            n_burn: 10_000,
            n_keep: 10_000,
            thin: 10,
            seed: 1,
            frozen: Vec::new(),
            monitor_latent: false,
            initial: None,
            progress_every: 1000,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains < 2 {
            return Err(Error::Config("at least two chains are needed for convergence checks".into()));
        }
        if self.thin == 0 || self.n_keep < self.thin {
            return Err(Error::Config("`thin` must be positive and at most `n_keep`".into()));
        }
        if self.initial.is_none() && self.frozen.iter().any(|b| *b != Block::Latent) {
            return Err(Error::Config("frozen parameter blocks need an initial state".into()));
        }
        Ok(())
    }

    pub fn draws_per_chain(&self) -> usize {
        self.n_keep / self.thin
    }

    fn is_frozen(&self, b: Block) -> bool {
        self.frozen.contains(&b)
    }
}

/// Thinned draws of every chain with convergence diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub names: Vec<String>,
    pub monitored: Vec<bool>,
    /// `chains[chain][draw][parameter]`
    pub chains: Vec<Vec<Vec<f64>>>,
    /// Split-Rhat of monitored parameters.
    pub rhat: Vec<Option<f64>>,
    /// Post-burn-in acceptance rate per block.
    pub acceptance: BTreeMap<Block, f64>,
    pub n_burn: usize,
    pub n_keep: usize,
    pub thin: usize,
    /// Final state of each chain.
    pub final_params: Vec<ModelParams>,
}

impl PosteriorDraws {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// All draws of a parameter, chains concatenated.
    pub fn pooled(&self, idx: usize) -> Vec<f64> {
        self.chains.iter().flat_map(|c| c.iter().map(move |d| d[idx])).collect()
    }

    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(Vec::len).sum()
    }

    pub fn max_rhat(&self) -> f64 {
        self.rhat.iter().flatten().cloned().fold(f64::NAN, f64::max)
    }

    /// Absolute iteration number of stored draw `k`.
    pub fn iteration(&self, k: usize) -> usize {
        self.n_burn + (k + 1) * self.thin
    }
}

/// Parameter names in storage order.
pub(crate) fn parameter_names(data: &FitData, priors: &PriorConfig, monitor_latent: bool) -> Vec<String> {
    let mut names = Vec::new();
    for cd in &data.comps {
        names.push(format!("r0[{}]", cd.key));
    }
    for age in &data.ages {
        for cov in &data.covariates {
            names.push(format!("beta[{age}|{cov}]"));
        }
    }
    for age in &data.ages {
        names.push(format!("psi[{age}]"));
    }
    names.push("mu_gen".into());
    names.push("mu_inc".into());
    names.push("mu_init".into());
    if priors.reporting_rate_beta.is_some() {
        names.push("reporting_rate".into());
    }
    if priors.noise_enabled() {
        for loc in &data.locations {
            for t in 0..data.n_days {
                names.push(format!("noise[{loc}|{}]", data.start + chrono::Duration::days(t as i64)));
            }
        }
    }
    if monitor_latent {
        for cd in &data.comps {
            for j in 0..S + data.n_days {
                names.push(format!("latent[{}|{}]", cd.key, j as i64 - S as i64));
            }
        }
    }
    names
}

fn flatten(state: &State, priors: &PriorConfig, monitor_latent: bool, out: &mut Vec<f64>) {
    out.clear();
    out.extend_from_slice(&state.r0);
    for b in &state.beta {
        out.extend_from_slice(b);
    }
    out.extend_from_slice(&state.psi);
    out.push(state.mu_gen);
    out.push(state.mu_inc);
    out.push(state.mu_init);
    if priors.reporting_rate_beta.is_some() {
        out.push(state.rate);
    }
    if priors.noise_enabled() {
        for n in &state.noise {
            out.extend_from_slice(n);
        }
    }
    if monitor_latent {
        for l in &state.latent {
            out.extend(l.iter().map(|&i| i as f64));
        }
    }
}

#[derive(Default, Clone, Copy)]
struct Tally {
    accepted: u64,
    proposed: u64,
}

/// Random-walk scale adapted by a Robbins-Monro recursion on its logarithm.
#[derive(Clone, Copy)]
struct Scale {
    log: f64,
    n: u32,
}

impl Scale {
    fn new(s: f64) -> Self {
        Self { log: s.ln(), n: 0 }
    }

    #[inline]
    fn get(&self) -> f64 {
        self.log.exp()
    }

    #[inline]
    fn adapt(&mut self, accepted: bool, floor: f64) {
        self.n += 1;
        let gain = (self.n as f64 + 1.0).powf(-0.6).min(0.5) * 2.0;
        self.log += gain * (accepted as u8 as f64 - TARGET_ACCEPTANCE);
        self.log = self.log.clamp(floor.ln(), 12.0);
    }
}

/// Joint move on an age group's log R0s and covariate effects. The proposal
/// covariance is learned from burn-in draws and frozen afterwards.
#[derive(Clone)]
struct AgeBlock {
    history: Vec<Vec<f64>>,
    chol: Option<Vec<Vec<f64>>>,
    scale: Scale,
}

/// Lower Cholesky factor; `None` unless positive definite.
fn cholesky(m: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = m.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = m[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

/// Sample covariance of `rows`, with a small ridge.
fn covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..d).map(|i| rows.iter().map(|r| r[i]).sum::<f64>() / n).collect();
    let mut cov = vec![vec![0.0; d]; d];
    for r in rows {
        for i in 0..d {
            for j in 0..=i {
                cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]) / (n - 1.0);
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            cov[j][i] = cov[i][j];
        }
        cov[i][i] += 1e-8;
    }
    cov
}

struct Chain<'a> {
    data: &'a FitData,
    priors: &'a PriorConfig,
    cfg: &'a FitConfig,
    lag_caps: (usize, usize),
    state: State,
    cache: Cache,
    rng: SimRng,
    r0_scale: Vec<Scale>,
    beta_scale: Vec<Vec<Scale>>,
    psi_scale: Vec<Scale>,
    noise_scale: Vec<Vec<Scale>>,
    gen_scale: Scale,
    inc_scale: Scale,
    init_scale: Scale,
    rate_scale: Scale,
    latent_scale: Vec<Vec<Scale>>,
    blocks: Vec<AgeBlock>,
    tally: BTreeMap<Block, Tally>,
    nodes: Vec<(u32, u32)>,
    buf: Vec<f64>,
    buf2: Vec<f64>,
    terms: Vec<(f64, f64, f64)>,
}

#[inline]
fn normal(rng: &mut SimRng) -> f64 {
    StandardNormal.sample(rng)
}

#[inline]
fn accept(rng: &mut SimRng, delta: f64) -> bool {
    if delta.is_nan() {
        return false;
    }
    delta >= 0.0 || rng.random::<f64>().ln() < delta
}

impl<'a> Chain<'a> {
    fn record(&mut self, block: Block, accepted: bool, adapt: bool) {
        if !adapt {
            let t = self.tally.entry(block).or_default();
            t.proposed += 1;
            t.accepted += accepted as u64;
        }
    }

    /// Transmission terms of compartment `c` under reproductive numbers
    /// `r(t)` and dispersion `psi`, written to `out`; returns the change in
    /// log density.
    fn retransmit(&self, c: usize, psi: f64, r: impl Fn(usize) -> f64, out: &mut Vec<(f64, f64, f64)>) -> f64 {
        let lat = &self.state.latent[c];
        let mut d = 0.0;
        for t in 0..self.data.n_days {
            let coef = nb_coefs(r(t), psi);
            let v = nb_core(lat[S + t], psi * self.cache.load[c][t], coef);
            d += v - self.cache.nb[c][t];
            out.push((coef.0, coef.1, v));
        }
        d
    }

    fn commit_transmission(&mut self, c: usize, terms: &[(f64, f64, f64)]) {
        for (t, &(a, b, v)) in terms.iter().enumerate() {
            self.cache.coef[c][t] = (a, b);
            self.cache.nb[c][t] = v;
            self.cache.rt[c][t] = self.cache.rt_value(self.data, &self.state, c, t);
        }
    }

    fn step_r0(&mut self, c: usize, adapt: bool) {
        let old = self.state.r0[c];
        let new = old * (self.r0_scale[c].get() * normal(&mut self.rng)).exp();
        let psi = self.state.psi[self.data.comps[c].age];
        let mut terms = std::mem::take(&mut self.terms);
        terms.clear();
        let ratio = new / old;
        let d = self.priors.ln_r0(new) - self.priors.ln_r0(old)
            + ratio.ln()
            + self.retransmit(c, psi, |t| self.cache.rt[c][t] * ratio, &mut terms);
        let ok = accept(&mut self.rng, d);
        if ok {
            self.state.r0[c] = new;
            self.commit_transmission(c, &terms);
        }
        self.terms = terms;
        if adapt {
            self.r0_scale[c].adapt(ok, 1e-6);
        }
        self.record(Block::R0, ok, adapt);
    }

    fn step_beta(&mut self, a: usize, j: usize, adapt: bool) {
        let data = self.data;
        let old = self.state.beta[a][j];
        let new = old + self.beta_scale[a][j].get() * normal(&mut self.rng);
        let mut beta = self.state.beta[a].clone();
        beta[j] = new;
        let mut d = self.priors.ln_beta(new) - self.priors.ln_beta(old);
        let mut eff: Vec<Option<Vec<f64>>> = vec![None; data.locations.len()];
        let mut ok = true;
        for &c in &data.by_age[a] {
            let loc = data.comps[c].loc;
            if eff[loc].is_none() {
                match data.effect_series(&beta, loc) {
                    Some(s) => eff[loc] = Some(s),
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
        }
        let mut all_terms = Vec::new();
        if ok {
            let psi = self.state.psi[a];
            for &c in &data.by_age[a] {
                let cd = &data.comps[c];
                let e = eff[cd.loc].as_ref().expect("filled above");
                let mut terms = Vec::with_capacity(data.n_days);
                d += self.retransmit(
                    c,
                    psi,
                    |t| self.state.r0[c] * e[t] * self.state.noise_factor(cd.loc, t),
                    &mut terms,
                );
                all_terms.push((c, terms));
            }
            ok = accept(&mut self.rng, d);
        }
        if ok {
            self.state.beta[a][j] = new;
            for (loc, s) in eff.into_iter().enumerate() {
                if let Some(s) = s {
                    self.cache.eff[a][loc] = s;
                }
            }
            for (c, terms) in all_terms {
                self.commit_transmission(c, &terms);
            }
        }
        if adapt {
            self.beta_scale[a][j].adapt(ok, 1e-6);
        }
        self.record(Block::Beta, ok, adapt);
    }

    fn joint_enabled(&self) -> bool {
        self.data.n_cov() > 0 && !self.cfg.is_frozen(Block::R0) && !self.cfg.is_frozen(Block::Beta)
    }

    fn block_point(&self, a: usize) -> Vec<f64> {
        let mut p: Vec<f64> = self.data.by_age[a].iter().map(|&c| self.state.r0[c].ln()).collect();
        p.extend_from_slice(&self.state.beta[a]);
        p
    }

    /// Burn-in bookkeeping for the joint moves: stores the current point and
    /// periodically refits the proposal covariance to the recent half.
    fn learn_blocks(&mut self, it: usize) {
        if !self.joint_enabled() {
            return;
        }
        for a in 0..self.data.ages.len() {
            let p = self.block_point(a);
            let b = &mut self.blocks[a];
            b.history.push(p);
            if it % BLOCK_REFIT == 0 && b.history.len() >= 2 * BLOCK_REFIT {
                let recent = &b.history[b.history.len() / 2..];
                if let Some(l) = cholesky(&covariance(recent)) {
                    b.chol = Some(l);
                }
            }
        }
    }

    fn step_joint(&mut self, a: usize, adapt: bool) {
        let Some(chol) = self.blocks[a].chol.clone() else {
            return;
        };
        let data = self.data;
        let comps = &data.by_age[a];
        let nc = comps.len();
        let z: Vec<f64> = (0..chol.len()).map(|_| normal(&mut self.rng)).collect();
        let lambda = self.blocks[a].scale.get();
        let step: Vec<f64> = chol
            .iter()
            .map(|row| lambda * row.iter().zip(&z).map(|(l, z)| l * z).sum::<f64>())
            .collect();
        let mut beta = self.state.beta[a].clone();
        let mut d = 0.0;
        for (j, b) in beta.iter_mut().enumerate() {
            let new = *b + step[nc + j];
            d += self.priors.ln_beta(new) - self.priors.ln_beta(*b);
            *b = new;
        }
        let mut eff: Vec<Option<Vec<f64>>> = vec![None; data.locations.len()];
        let mut ok = true;
        for &c in comps {
            let loc = data.comps[c].loc;
            if eff[loc].is_none() {
                match data.effect_series(&beta, loc) {
                    Some(s) => eff[loc] = Some(s),
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
        }
        let mut all_terms = Vec::new();
        let mut r0 = Vec::with_capacity(nc);
        if ok {
            let psi = self.state.psi[a];
            for (k, &c) in comps.iter().enumerate() {
                let old = self.state.r0[c];
                let new = old * step[k].exp();
                d += self.priors.ln_r0(new) - self.priors.ln_r0(old) + step[k];
                let cd = &data.comps[c];
                let e = eff[cd.loc].as_ref().expect("filled above");
                let mut terms = Vec::with_capacity(data.n_days);
                d += self.retransmit(c, psi, |t| new * e[t] * self.state.noise_factor(cd.loc, t), &mut terms);
                all_terms.push((c, terms));
                r0.push(new);
            }
            ok = accept(&mut self.rng, d);
        }
        if ok {
            self.state.beta[a] = beta;
            for (k, &c) in comps.iter().enumerate() {
                self.state.r0[c] = r0[k];
            }
            for (loc, s) in eff.into_iter().enumerate() {
                if let Some(s) = s {
                    self.cache.eff[a][loc] = s;
                }
            }
            for (c, terms) in all_terms {
                self.commit_transmission(c, &terms);
            }
        }
        if adapt {
            self.blocks[a].scale.adapt(ok, 1e-6);
        }
        self.record(Block::Beta, ok, adapt);
    }

    fn step_psi(&mut self, a: usize, adapt: bool) {
        let data = self.data;
        let old = self.state.psi[a];
        let new = old * (self.psi_scale[a].get() * normal(&mut self.rng)).exp();
        let mut d = self.priors.ln_dispersion(new) - self.priors.ln_dispersion(old) + (new / old).ln();
        let mut all_terms = Vec::with_capacity(data.by_age[a].len());
        for &c in &data.by_age[a] {
            let mut terms = Vec::with_capacity(data.n_days);
            d += self.retransmit(c, new, |t| self.cache.rt[c][t], &mut terms);
            all_terms.push((c, terms));
        }
        let ok = accept(&mut self.rng, d);
        if ok {
            self.state.psi[a] = new;
            for (c, terms) in all_terms {
                self.commit_transmission(c, &terms);
            }
        }
        if adapt {
            self.psi_scale[a].adapt(ok, 1e-6);
        }
        self.record(Block::Dispersion, ok, adapt);
    }

    fn step_noise(&mut self, l: usize, t: usize, adapt: bool) {
        let data = self.data;
        let old = self.state.noise[l][t];
        let new = old + self.noise_scale[l][t].get() * normal(&mut self.rng);
        let mut ok = new > -1.0;
        if ok {
            let mut d = self.priors.ln_noise(new) - self.priors.ln_noise(old);
            let mut terms = std::mem::take(&mut self.terms);
            terms.clear();
            for &c in &data.by_loc[l] {
                let cd = &data.comps[c];
                let psi = self.state.psi[cd.age];
                let r = self.state.r0[c] * self.cache.eff[cd.age][l][t] * (1.0 + new);
                let coef = nb_coefs(r, psi);
                let v = nb_core(self.state.latent[c][S + t], psi * self.cache.load[c][t], coef);
                d += v - self.cache.nb[c][t];
                terms.push((coef.0, coef.1, v));
            }
            ok = accept(&mut self.rng, d);
            if ok {
                self.state.noise[l][t] = new;
                for (k, &c) in data.by_loc[l].iter().enumerate() {
                    let (a, b, v) = terms[k];
                    self.cache.coef[c][t] = (a, b);
                    self.cache.nb[c][t] = v;
                    self.cache.rt[c][t] = self.cache.rt_value(data, &self.state, c, t);
                }
            }
            self.terms = terms;
        }
        if adapt {
            self.noise_scale[l][t].adapt(ok, 1e-6);
        }
        self.record(Block::Noise, ok, adapt);
    }

    fn step_gen(&mut self, adapt: bool) {
        let data = self.data;
        let old = self.state.mu_gen;
        let new = old + self.gen_scale.get() * normal(&mut self.rng);
        let mut ok = false;
        if let Some(pmf) = delay_pmf(new, self.priors.delay_sd, self.lag_caps.0) {
            let mut d = self.priors.ln_delay_mean(new) - self.priors.ln_delay_mean(old);
            let mut loads = Vec::with_capacity(data.comps.len());
            let mut nbs = Vec::with_capacity(data.comps.len());
            for c in 0..data.comps.len() {
                let lat = &self.state.latent[c];
                let psi = self.state.psi[data.comps[c].age];
                let mut lv = Vec::with_capacity(data.n_days);
                let mut nv = Vec::with_capacity(data.n_days);
                for t in 0..data.n_days {
                    let load = conv_at(lat, &pmf, S + t);
                    let term = nb_core(lat[S + t], psi * load, self.cache.coef[c][t]);
                    d += term - self.cache.nb[c][t];
                    lv.push(load);
                    nv.push(term);
                }
                loads.push(lv);
                nbs.push(nv);
            }
            ok = accept(&mut self.rng, d);
            if ok {
                self.state.mu_gen = new;
                self.cache.gen = pmf;
                self.cache.load = loads;
                self.cache.nb = nbs;
            }
        }
        if adapt {
            self.gen_scale.adapt(ok, 1e-6);
        }
        self.record(Block::GenerationMean, ok, adapt);
    }

    fn measurement_with(&self, inc: &[f64], rate: f64, fresh: bool) -> (f64, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let data = self.data;
        let mut d = 0.0;
        let mut convs = Vec::with_capacity(data.comps.len());
        let mut pois = Vec::with_capacity(data.comps.len());
        for (c, cd) in data.comps.iter().enumerate() {
            let lat = &self.state.latent[c];
            let mut cv = Vec::with_capacity(data.n_days);
            let mut pv = Vec::with_capacity(data.n_days);
            for t in 0..data.n_days {
                let v = if fresh { conv_at(lat, inc, S + t) } else { self.cache.conv[c][t] };
                let term = pois_term(cd.cases[t], cd.ln_fact[t], rate * v);
                d += term - self.cache.pois[c][t];
                cv.push(v);
                pv.push(term);
            }
            convs.push(cv);
            pois.push(pv);
        }
        (d, convs, pois)
    }

    fn step_inc(&mut self, adapt: bool) {
        let old = self.state.mu_inc;
        let new = old + self.inc_scale.get() * normal(&mut self.rng);
        let mut ok = false;
        if let Some(pmf) = delay_pmf(new, self.priors.delay_sd, self.lag_caps.1) {
            let (dm, convs, pois) = self.measurement_with(&pmf, self.state.rate, true);
            let d = dm + self.priors.ln_delay_mean(new) - self.priors.ln_delay_mean(old);
            ok = accept(&mut self.rng, d);
            if ok {
                self.state.mu_inc = new;
                self.cache.inc = pmf;
                self.cache.conv = convs;
                self.cache.pois = pois;
            }
        }
        if adapt {
            self.inc_scale.adapt(ok, 1e-6);
        }
        self.record(Block::IncubationMean, ok, adapt);
    }

    fn step_rate(&mut self, adapt: bool) {
        let old = self.state.rate;
        let logit = (old / (1.0 - old)).ln() + self.rate_scale.get() * normal(&mut self.rng);
        let new = 1.0 / (1.0 + (-logit).exp());
        let mut ok = false;
        if new > 0.0 && new < 1.0 {
            let (dm, _, pois) = self.measurement_with(&[], new, false);
            let jac = (new * (1.0 - new)).ln() - (old * (1.0 - old)).ln();
            let d = dm + self.priors.ln_reporting_rate(new) - self.priors.ln_reporting_rate(old) + jac;
            ok = accept(&mut self.rng, d);
            if ok {
                self.state.rate = new;
                self.cache.pois = pois;
            }
        }
        if adapt {
            self.rate_scale.adapt(ok, 1e-6);
        }
        self.record(Block::ReportingRate, ok, adapt);
    }

    fn step_init(&mut self, adapt: bool) {
        let old = self.state.mu_init;
        let new = old * (self.init_scale.get() * normal(&mut self.rng)).exp();
        let d = self.priors.ln_init_mean(new) - self.priors.ln_init_mean(old)
            + (new / old).ln()
            + seed_prior(self.data, &self.state, new)
            - seed_prior(self.data, &self.state, old);
        let ok = accept(&mut self.rng, d);
        if ok {
            self.state.mu_init = new;
        }
        if adapt {
            self.init_scale.adapt(ok, 1e-6);
        }
        self.record(Block::InitMean, ok, adapt);
    }

    /// Integer random walk on one latent count. Loads and expected cases
    /// downstream of day `j` shift by the change times the delay weights.
    fn step_latent(&mut self, c: usize, j: usize, adapt: bool) {
        let data = self.data;
        let n = data.n_days;
        let old = self.state.latent[c][j];
        let scale = self.latent_scale[c][j].get();
        let jump = if scale <= 1.0 {
            1
        } else {
            1 + Geometric::new(1.0 / scale).map_or(0, |g| g.sample(&mut self.rng))
        };
        let up: bool = self.rng.random();
        if !up && jump > old {
            if adapt {
                self.latent_scale[c][j].adapt(false, 1.0);
            }
            self.record(Block::Latent, false, adapt);
            return;
        }
        let new = if up { old.saturating_add(jump) } else { old - jump };
        let delta = new as f64 - old as f64;
        let cd = &data.comps[c];
        let psi = self.state.psi[cd.age];
        let mut d = 0.0;
        if j < S {
            let m = seed_day_mean(self.state.mu_init);
            d += ln_seed_pmf(new, m) - ln_seed_pmf(old, m);
        }
        let mut own = (0.0, 0.0);
        if j >= S {
            let t = j - S;
            let v = nb_core(new, psi * self.cache.load[c][t], self.cache.coef[c][t]);
            let lf = ln_fact(new);
            d += v - self.cache.nb[c][t] - (lf - self.cache.lnfact[c][t]);
            own = (v, lf);
        }
        let first = (j + 1).saturating_sub(S);
        let gen_end = (j + self.cache.gen.len() + 1).saturating_sub(S).min(n);
        let inc_end = (j + self.cache.inc.len() + 1).saturating_sub(S).min(n);
        let lat = &self.state.latent[c];
        self.buf.clear();
        for t in first..gen_end {
            let load = self.cache.load[c][t] + delta * self.cache.gen[S + t - j - 1];
            let term = nb_core(lat[S + t], psi * load, self.cache.coef[c][t]);
            d += term - self.cache.nb[c][t];
            self.buf.push(load);
            self.buf.push(term);
        }
        self.buf2.clear();
        if d > f64::NEG_INFINITY {
            let rate = self.state.rate;
            for t in first..inc_end {
                let v = self.cache.conv[c][t] + delta * self.cache.inc[S + t - j - 1];
                let term = pois_term(cd.cases[t], cd.ln_fact[t], rate * v);
                d += term - self.cache.pois[c][t];
                self.buf2.push(v);
                self.buf2.push(term);
            }
        }
        let ok = accept(&mut self.rng, d);
        if ok {
            self.state.latent[c][j] = new;
            if j >= S {
                self.cache.nb[c][j - S] = own.0;
                self.cache.lnfact[c][j - S] = own.1;
            }
            for (k, t) in (first..gen_end).enumerate() {
                self.cache.load[c][t] = self.buf[2 * k];
                self.cache.nb[c][t] = self.buf[2 * k + 1];
            }
            for (k, t) in (first..inc_end).enumerate() {
                self.cache.conv[c][t] = self.buf2[2 * k];
                self.cache.pois[c][t] = self.buf2[2 * k + 1];
            }
        }
        if adapt {
            self.latent_scale[c][j].adapt(ok, 1.0);
        }
        self.record(Block::Latent, ok, adapt);
    }

    fn iterate(&mut self, adapt: bool) {
        let data = self.data;
        if !self.cfg.is_frozen(Block::R0) {
            for c in 0..data.comps.len() {
                self.step_r0(c, adapt);
            }
        }
        if !self.cfg.is_frozen(Block::Beta) {
            for a in 0..data.ages.len() {
                for j in 0..data.n_cov() {
                    self.step_beta(a, j, adapt);
                }
            }
        }
        if self.joint_enabled() {
            for a in 0..data.ages.len() {
                self.step_joint(a, adapt);
            }
        }
        if !self.cfg.is_frozen(Block::Dispersion) {
            for a in 0..data.ages.len() {
                self.step_psi(a, adapt);
            }
        }
        if self.priors.noise_enabled() && !self.cfg.is_frozen(Block::Noise) {
            for l in 0..data.locations.len() {
                for t in 0..data.n_days {
                    self.step_noise(l, t, adapt);
                }
            }
        }
        if !self.cfg.is_frozen(Block::GenerationMean) {
            self.step_gen(adapt);
        }
        if !self.cfg.is_frozen(Block::IncubationMean) {
            self.step_inc(adapt);
        }
        if !self.cfg.is_frozen(Block::InitMean) {
            self.step_init(adapt);
        }
        if self.priors.reporting_rate_beta.is_some() && !self.cfg.is_frozen(Block::ReportingRate) {
            self.step_rate(adapt);
        }
        if !self.cfg.is_frozen(Block::Latent) {
            let mut nodes = std::mem::take(&mut self.nodes);
            nodes.shuffle(&mut self.rng);
            for &(c, j) in &nodes {
                self.step_latent(c as usize, j as usize, adapt);
            }
            self.nodes = nodes;
        }
    }

    fn log_posterior(&self) -> f64 {
        self.cache.transmission() + self.cache.measurement() + log_prior(self.data, &self.state, self.priors)
    }

    /// Recomputes every cache entry from the state.
    fn resync(&mut self) {
        if let Some(c) = Cache::build(self.data, &self.state, self.cache.gen.clone(), self.cache.inc.clone()) {
            self.cache = c;
        }
    }
}

fn lag_caps(priors: &PriorConfig) -> (usize, usize) {
    let cap = default_lag_cap(priors.delay_mean + 6.0 * priors.delay_mean_sd, priors.delay_sd);
    (cap, cap)
}

/// Latent starting values from the case series: back-shifted by the
/// incubation mean, smoothed over a week and scaled by the reporting rate.
fn latent_guess(data: &FitData, c: usize, shift: usize, rate: f64, rng: &mut SimRng) -> Vec<u64> {
    let cases = &data.comps[c].cases;
    let n = data.n_days;
    let smooth = |t: usize| -> f64 {
        if n == 0 {
            return 0.0;
        }
        let lo = t.saturating_sub(3);
        let hi = (t + 3).min(n - 1);
        (lo..=hi).map(|k| cases[k] as f64).sum::<f64>() / (hi - lo + 1) as f64
    };
    (0..S + n)
        .map(|j| {
            let t = (j + shift).saturating_sub(S).min(n.saturating_sub(1));
            let g = smooth(t) / rate * (0.1 * normal(rng)).exp();
            (g.round() as u64).max(1)
        })
        .collect()
}

fn draw_initial(data: &FitData, priors: &PriorConfig, cfg: &FitConfig, rng: &mut SimRng) -> Result<State> {
    let jitter = |rng: &mut SimRng, sd: f64| (sd * normal(rng)).exp();
    if let Some(init) = &cfg.initial {
        let mut s = state_from_params(data, init, priors)?;
        if !cfg.is_frozen(Block::R0) {
            for r in &mut s.r0 {
                *r *= jitter(rng, 0.1);
            }
        }
        if !cfg.is_frozen(Block::Dispersion) {
            for p in &mut s.psi {
                *p *= jitter(rng, 0.1);
            }
        }
        if !cfg.is_frozen(Block::Beta) {
            for b in s.beta.iter_mut().flatten() {
                *b += 0.02 * normal(rng);
            }
        }
        if !cfg.is_frozen(Block::InitMean) {
            s.mu_init *= jitter(rng, 0.1);
        }
        return Ok(s);
    }
    let n_loc = data.locations.len();
    let rate = priors.reporting_rate_beta.map_or(priors.reporting_rate, |(a, b)| a / (a + b));
    let mu_inc = priors.delay_mean + priors.delay_mean_sd * normal(rng);
    let latent: Vec<Vec<u64>> = (0..data.comps.len())
        .map(|c| latent_guess(data, c, mu_inc.round().max(0.0) as usize, rate, rng))
        .collect();
    let seeds: f64 = latent.iter().map(|l| l[..S].iter().sum::<u64>() as f64).sum::<f64>();
    let mu_init = (seeds / data.comps.len().max(1) as f64).clamp(0.5, 1e6) * jitter(rng, 0.2);
    Ok(State {
        r0: (0..data.comps.len()).map(|_| 1.5 * jitter(rng, 0.3)).collect(),
        beta: (0..data.ages.len())
            .map(|_| (0..data.n_cov()).map(|_| 0.05 * normal(rng)).collect())
            .collect(),
        psi: (0..data.ages.len()).map(|_| rng.random_range(0.3..2.0)).collect(),
        mu_gen: priors.delay_mean + priors.delay_mean_sd * normal(rng),
        mu_inc,
        mu_init,
        rate,
        noise: if priors.noise_enabled() {
            vec![vec![0.0; data.n_days]; n_loc]
        } else {
            Vec::new()
        },
        latent,
    })
}

struct ChainOutput {
    draws: Vec<Vec<f64>>,
    tally: BTreeMap<Block, Tally>,
    final_params: ModelParams,
}

fn start_chain<'a>(data: &'a FitData, priors: &'a PriorConfig, cfg: &'a FitConfig, chain: usize) -> Result<Chain<'a>> {
    let mut rng = stream_rng(cfg.seed, chain as u64);
    let caps = lag_caps(priors);
    let mut start = None;
    for _ in 0..INIT_ATTEMPTS {
        let state = draw_initial(data, priors, cfg, &mut rng)?;
        let (gen, inc) = match &cfg.initial {
            Some(p) if cfg.is_frozen(Block::GenerationMean) || cfg.is_frozen(Block::IncubationMean) => {
                (p.generation.pmf().to_vec(), p.incubation.pmf().to_vec())
            }
            _ => match (
                delay_pmf(state.mu_gen, priors.delay_sd, caps.0),
                delay_pmf(state.mu_inc, priors.delay_sd, caps.1),
            ) {
                (Some(g), Some(i)) => (g, i),
                _ => continue,
            },
        };
        let Some(cache) = Cache::build(data, &state, gen, inc) else {
            continue;
        };
        let lp = cache.transmission() + cache.measurement() + log_prior(data, &state, priors);
        if lp.is_finite() {
            start = Some((state, cache));
            break;
        }
    }
    let (state, cache) = start.ok_or(Error::InitializationFailure(INIT_ATTEMPTS))?;
    let n_cov = data.n_cov();
    Ok(Chain {
        data,
        priors,
        cfg,
        lag_caps: caps,
        r0_scale: vec![Scale::new(0.05); data.comps.len()],
        beta_scale: vec![vec![Scale::new(0.05); n_cov]; data.ages.len()],
        psi_scale: vec![Scale::new(0.1); data.ages.len()],
        noise_scale: vec![vec![Scale::new(0.05); data.n_days]; state.noise.len()],
        gen_scale: Scale::new(0.05),
        inc_scale: Scale::new(0.05),
        init_scale: Scale::new(0.2),
        rate_scale: Scale::new(0.1),
        blocks: data
            .by_age
            .iter()
            .map(|comps| AgeBlock {
                history: Vec::new(),
                chol: None,
                scale: Scale::new(2.38 / ((comps.len() + n_cov) as f64).sqrt()),
            })
            .collect(),
        latent_scale: state
            .latent
            .iter()
            .map(|l| l.iter().map(|&i| Scale::new((i as f64).sqrt().max(1.0))).collect())
            .collect(),
        nodes: (0..data.comps.len())
            .flat_map(|c| (0..S + data.n_days).map(move |j| (c as u32, j as u32)))
            .collect(),
        state,
        cache,
        rng,
        tally: BTreeMap::new(),
        buf: Vec::new(),
        buf2: Vec::new(),
        terms: Vec::new(),
    })
}

fn run_chain(data: &FitData, priors: &PriorConfig, cfg: &FitConfig, chain: usize) -> Result<ChainOutput> {
    let mut ch = start_chain(data, priors, cfg, chain)?;

    let total = cfg.n_burn + cfg.n_keep;
    let mut draws = Vec::with_capacity(cfg.draws_per_chain());
    let mut row = Vec::new();
    for it in 1..=total {
        let adapt = it <= cfg.n_burn;
        ch.iterate(adapt);
        if adapt {
            ch.learn_blocks(it);
        }
        if it % 100 == 0 {
            ch.resync();
        }
        if !adapt && (it - cfg.n_burn) % cfg.thin == 0 && draws.len() < cfg.draws_per_chain() {
            flatten(&ch.state, priors, cfg.monitor_latent, &mut row);
            draws.push(row.clone());
        }
        if cfg.progress_every > 0 && it % cfg.progress_every == 0 {
            log::info!(
                "chain {chain}: iteration {it}/{total} ({}), log posterior {:.3}",
                if adapt { "burn-in" } else { "sampling" },
                ch.log_posterior()
            );
        }
    }
    let final_params = params_from_state(data, &ch.state, priors, &ch.cache.gen, &ch.cache.inc)?;
    Ok(ChainOutput {
        draws,
        tally: ch.tally,
        final_params,
    })
}

/// Split-Rhat per parameter; `None` for unmonitored ones.
pub(crate) fn chain_rhats(chains: &[Vec<Vec<f64>>], monitored: &[bool]) -> Vec<Option<f64>> {
    (0..monitored.len())
        .map(|p| {
            monitored[p].then(|| {
                let series: Vec<Vec<f64>> = chains.iter().map(|c| c.iter().map(|d| d[p]).collect()).collect();
                let refs: Vec<&[f64]> = series.iter().map(Vec::as_slice).collect();
                split_rhat(&refs)
            })
        })
        .collect()
}

/// Runs `config.n_chains` independent chains (in parallel when threads are
/// available) and collects thinned draws and diagnostics.
pub fn mcmc_fit(panel: &Panel, priors: &PriorConfig, config: &FitConfig) -> Result<PosteriorDraws> {
    priors.validate()?;
    config.validate()?;
    let data = FitData::from_panel(panel)?;
    let names = parameter_names(&data, priors, config.monitor_latent);
    let outputs = (0..config.n_chains)
        .into_par_iter()
        .map(|c| run_chain(&data, priors, config, c))
        .collect::<Result<Vec<_>>>()?;

    let n_latent_start = if config.monitor_latent {
        names.len() - data.comps.len() * (S + data.n_days)
    } else {
        names.len()
    };
    let monitored: Vec<bool> = (0..names.len())
        .map(|i| i < n_latent_start || config.monitor_latent)
        .collect();
    let chains: Vec<Vec<Vec<f64>>> = outputs.iter().map(|o| o.draws.clone()).collect();
    let rhat = chain_rhats(&chains, &monitored);
    let mut tally: BTreeMap<Block, Tally> = BTreeMap::new();
    for o in &outputs {
        for (b, t) in &o.tally {
            let e = tally.entry(*b).or_default();
            e.accepted += t.accepted;
            e.proposed += t.proposed;
        }
    }
    Ok(PosteriorDraws {
        names,
        monitored,
        chains,
        rhat,
        acceptance: tally
            .into_iter()
            .filter(|(_, t)| t.proposed > 0)
            .map(|(b, t)| (b, t.accepted as f64 / t.proposed as f64))
            .collect(),
        n_burn: config.n_burn,
        n_keep: config.n_keep,
        thin: config.thin,
        final_params: outputs.into_iter().map(|o| o.final_params).collect(),
    })
}

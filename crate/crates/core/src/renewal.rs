//! Forward simulation of latent infections and reported symptom onsets.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{nb_draw, poisson_draw, DelayDistribution};
use crate::effects::{reproductive_number, CovariatePanel};
use crate::error::{Error, Result};
use crate::features::CaseRecord;
use crate::model::{CompartmentKey, ModelParams, SEED_DAYS};
use crate::rng::stream_rng;

/// Means beyond this are treated as a runaway simulation.
const MAX_MEAN: f64 = 1e15;

const NOISE_STREAM: u64 = 1 << 32;
const REPORT_STREAM: u64 = 2 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Dispersion scales with the load: `NB(R L, Psi L)`.
    #[default]
    PerIndividual,
    /// Fixed dispersion: `NB(R L, Psi)`.
    Constant,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-individual" => Ok(Variant::PerIndividual),
            "constant" => Ok(Variant::Constant),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }
}

/// `sum_{l>=1} D(l) * history[t - l]`, with days before index 0 counted as 0.
#[inline]
pub fn viral_load(history: &[u64], generation: &DelayDistribution, t: usize) -> f64 {
    convolve_at(history, generation.pmf(), t)
}

#[inline]
pub(crate) fn convolve_at(history: &[u64], pmf: &[f64], t: usize) -> f64 {
    let mut acc = 0.0;
    for (l, p) in pmf.iter().enumerate().take(t) {
        if let Some(&i) = history.get(t - l - 1) {
            acc += p * i as f64;
        }
    }
    acc
}

fn check_step(load: f64, r_t: f64, dispersion: f64) -> Result<()> {
    if !(load >= 0.0 && load.is_finite()) {
        return Err(Error::invalid("load", format!("must be non-negative, got {load}")));
    }
    if !(r_t > 0.0 && r_t.is_finite()) {
        return Err(Error::invalid("r_t", format!("must be positive, got {r_t}")));
    }
    if !(dispersion > 0.0) {
        return Err(Error::invalid("dispersion", format!("must be positive, got {dispersion}")));
    }
    if r_t * load > MAX_MEAN {
        return Err(Error::invalid("load", format!("expected infections {} overflow", r_t * load)));
    }
    Ok(())
}

/// New infections from `load`, each infector drawing NB(r_t, dispersion).
pub fn step<R: Rng + ?Sized>(load: f64, r_t: f64, dispersion: f64, rng: &mut R) -> Result<u64> {
    check_step(load, r_t, dispersion)?;
    if load == 0.0 {
        return Ok(0);
    }
    Ok(nb_draw(r_t * load, dispersion * load, rng))
}

pub fn step_constant_dispersion<R: Rng + ?Sized>(
    load: f64,
    r_t: f64,
    dispersion: f64,
    rng: &mut R,
) -> Result<u64> {
    check_step(load, r_t, dispersion)?;
    if load == 0.0 {
        return Ok(0);
    }
    Ok(nb_draw(r_t * load, dispersion, rng))
}

/// Latent process of one compartment. Index 0 of `infections` is day
/// `start` relative to panel day 0; `viral_load` and `r_values` cover panel
/// days `0..horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentTrajectory {
    pub start: i64,
    pub infections: Vec<u64>,
    pub viral_load: Vec<f64>,
    pub r_values: Vec<f64>,
}

impl LatentTrajectory {
    pub fn infections_on(&self, day: i64) -> u64 {
        let idx = day - self.start;
        if idx < 0 {
            0
        } else {
            self.infections.get(idx as usize).copied().unwrap_or(0)
        }
    }
}

/// `r * sum_l D_s(l) * infections(day - l)`.
pub fn expected_cases(latent: &LatentTrajectory, incubation: &DelayDistribution, reporting_rate: f64, day: i64) -> f64 {
    let mut acc = 0.0;
    for (l, p) in incubation.pmf().iter().enumerate() {
        acc += p * latent.infections_on(day - l as i64 - 1) as f64;
    }
    reporting_rate * acc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompartmentSeries {
    pub key: CompartmentKey,
    pub latent: LatentTrajectory,
    pub expected_cases: Vec<f64>,
    pub sampled_cases: Vec<u64>,
    /// First panel day whose viral load is zero (the process is extinct from then on).
    pub extinction_day: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedPanel {
    pub start: NaiveDate,
    pub horizon: usize,
    pub compartments: Vec<CompartmentSeries>,
    /// Error terms actually used, per location and panel day.
    pub noise: BTreeMap<String, Vec<f64>>,
}

impl SimulatedPanel {
    pub fn get(&self, key: &CompartmentKey) -> Option<&CompartmentSeries> {
        self.compartments.iter().find(|c| &c.key == key)
    }

    /// Expands sampled cases into a line list. Onset dates are the simulated
    /// days; report dates add a Poisson(`mean_report_delay`) delay drawn from
    /// a stream of `seed` separate from the simulation streams.
    pub fn to_case_records(&self, seed: u64, mean_report_delay: f64) -> Vec<CaseRecord> {
        let mut out = Vec::new();
        for (idx, comp) in self.compartments.iter().enumerate() {
            let mut rng = stream_rng(seed, REPORT_STREAM + idx as u64);
            for (day, &n) in comp.sampled_cases.iter().enumerate() {
                let onset = self.start + Duration::days(day as i64);
                for _ in 0..n {
                    let delay = poisson_draw(mean_report_delay, &mut rng);
                    out.push(CaseRecord {
                        onset_date: Some(onset),
                        report_date: onset + Duration::days(delay as i64),
                        age_group: comp.key.age,
                        location: comp.key.location.clone(),
                        died: false,
                    });
                }
            }
        }
        out
    }
}

fn draw_noise(seed: u64, loc_idx: usize, sd: f64, horizon: usize) -> Result<Vec<f64>> {
    if sd == 0.0 {
        return Ok(vec![0.0; horizon]);
    }
    let normal = Normal::new(0.0, sd).map_err(|e| Error::invalid("noise_sd", e.to_string()))?;
    let mut rng = stream_rng(seed, NOISE_STREAM + loc_idx as u64);
    Ok((0..horizon)
        .map(|_| loop {
            let e: f64 = normal.sample(&mut rng);
            if e > -1.0 {
                break e;
            }
        })
        .collect())
}

/// Seeded infections: explicit values from `params.latent` when present,
/// otherwise exponential draws with mean `init_mean / SEED_DAYS` rounded.
fn seeds<R: Rng + ?Sized>(params: &ModelParams, key: &CompartmentKey, rng: &mut R) -> Result<Vec<u64>> {
    if let Some(l) = params.latent.get(key) {
        if l.start != -(SEED_DAYS as i64) || l.infections.len() < SEED_DAYS {
            return Err(Error::invalid(
                format!("latent[{key}]"),
                format!("explicit seeds must cover days -{SEED_DAYS}..-1"),
            ));
        }
        return Ok(l.seeds().to_vec());
    }
    let exp = Exp::new(SEED_DAYS as f64 / params.init_mean).map_err(|e| Error::invalid("init_mean", e.to_string()))?;
    Ok((0..SEED_DAYS).map(|_| exp.sample(rng).round() as u64).collect())
}

/// Simulates every compartment of `params` for `horizon` days after the
/// seeded period. Compartment `i` (in key order) draws from stream `i` of
/// `seed`; error terms are drawn per location when `params.effects.noise`
/// is absent and `noise_sd > 0`.
pub fn simulate(
    params: &ModelParams,
    covariates: &CovariatePanel,
    horizon: usize,
    variant: Variant,
    seed: u64,
) -> Result<SimulatedPanel> {
    params.validate()?;
    let keys = params.compartments();
    let mut locations: Vec<&str> = keys.iter().map(|k| k.location.as_str()).collect();
    locations.dedup();
    if covariates.n_covariates() > 0 || !params.effects.covariates.is_empty() {
        params.effects.validate_against(covariates)?;
    }
    covariates.check_complete(&locations, horizon)?;

    let mut noise = BTreeMap::new();
    for (i, loc) in locations.iter().enumerate() {
        let series = match params.effects.noise.as_ref().and_then(|n| n.get(*loc)) {
            Some(v) if v.len() >= horizon => v[..horizon].to_vec(),
            Some(_) => {
                return Err(Error::DimensionMismatch(format!("noise for `{loc}` shorter than horizon {horizon}")));
            }
            None => draw_noise(seed, i, params.effects.noise_sd, horizon)?,
        };
        noise.insert(loc.to_string(), series);
    }
    let mut effects = params.effects.clone();
    effects.noise = Some(noise.clone());

    let compartments = keys
        .par_iter()
        .enumerate()
        .map(|(idx, key)| {
            let mut rng = stream_rng(seed, idx as u64);
            let psi = params.dispersion_for(key.age)?;
            let loc = covariates.location_index(&key.location);
            let mut infections = seeds(params, key, &mut rng)?;
            infections.reserve(horizon);
            let mut loads = Vec::with_capacity(horizon);
            let mut r_values = Vec::with_capacity(horizon);
            let mut extinction_day = None;
            for t in 0..horizon {
                let load = viral_load(&infections, &params.generation, t + SEED_DAYS);
                let x = loc.map_or(&[][..], |l| covariates.row(l, t));
                let r = reproductive_number(&effects, x, key, t)?;
                let i = match variant {
                    Variant::PerIndividual => step(load, r, psi, &mut rng)?,
                    Variant::Constant => step_constant_dispersion(load, r, psi, &mut rng)?,
                };
                if load == 0.0 && extinction_day.is_none() {
                    extinction_day = Some(t);
                }
                infections.push(i);
                loads.push(load);
                r_values.push(r);
            }
            let latent = LatentTrajectory {
                start: -(SEED_DAYS as i64),
                infections,
                viral_load: loads,
                r_values,
            };
            let expected: Vec<f64> = (0..horizon)
                .map(|t| expected_cases(&latent, &params.incubation, params.reporting_rate, t as i64))
                .collect();
            let sampled = expected.iter().map(|&m| poisson_draw(m, &mut rng)).collect();
            Ok(CompartmentSeries {
                key: key.clone(),
                latent,
                expected_cases: expected,
                sampled_cases: sampled,
                extinction_day,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SimulatedPanel {
        start: covariates.start(),
        horizon,
        compartments,
        noise,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::effects::{CovariateKind, CovariateSpec, EffectSet};
    use crate::model::{AgeGroup, LatentInfections};
    use crate::rng::SimRng;
    use rand::SeedableRng;

    fn rng(seed: u64) -> SimRng {
        SimRng::seed_from_u64(seed)
    }

    #[test]
    fn viral_load_examples() {
        let point = DelayDistribution::point_mass(1).unwrap();
        assert_eq!(viral_load(&[3, 10], &point, 2), 10.0);
        assert_eq!(viral_load(&[0, 0, 0], &point, 3), 0.0);
        assert_eq!(viral_load(&[], &point, 0), 0.0);
        let two = DelayDistribution::from_pmf(vec![0.5, 0.5]).unwrap();
        assert_eq!(viral_load(&[4, 6], &two, 2), 5.0);
    }

    fn moments(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn step_moments() {
        let mut r = rng(3);
        assert_eq!(step(0.0, 2.0, 0.5, &mut r).unwrap(), 0);
        let xs: Vec<f64> = (0..100_000).map(|_| step(1000.0, 1.0, 0.5, &mut r).unwrap() as f64).collect();
        let (m, v) = moments(&xs);
        assert!((m - 1000.0).abs() < 10.0, "{m}");
        assert!((v / m - 3.0).abs() < 0.1, "{}", v / m);
    }

    #[test]
    fn step_zero_fraction() {
        let mut r = rng(4);
        let n = 100_000;
        let zeros = (0..n).filter(|_| step(1.0, 2.5, 0.2, &mut r).unwrap() == 0).count();
        let oracle = (0.2f64 / 2.7).powf(0.2);
        assert!((zeros as f64 / n as f64 - oracle).abs() < 0.005);
    }

    #[test]
    fn constant_dispersion_moments() {
        let mut r = rng(5);
        assert_eq!(step_constant_dispersion(0.0, 1.0, 0.5, &mut r).unwrap(), 0);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| step_constant_dispersion(1000.0, 1.0, 0.5, &mut r).unwrap() as f64)
            .collect();
        let (m, v) = moments(&xs);
        let ratio = v / m;
        assert!((ratio / 2001.0 - 1.0).abs() < 0.1, "{ratio}");
    }

    #[test]
    fn expected_cases_examples() {
        let flat = LatentTrajectory {
            start: -30,
            infections: vec![100; 60],
            viral_load: vec![],
            r_values: vec![],
        };
        let inc = DelayDistribution::gamma_default(5.3, 2.0).unwrap();
        assert!((expected_cases(&flat, &inc, 0.25, 10) - 25.0).abs() < 1e-9);

        let mut spike = vec![0; 10];
        spike[0] = 40;
        let latent = LatentTrajectory {
            start: -5,
            infections: spike,
            viral_load: vec![],
            r_values: vec![],
        };
        let five = DelayDistribution::point_mass(5).unwrap();
        assert_eq!(expected_cases(&latent, &five, 0.5, 0), 20.0);
    }

    #[test]
    fn onset_peak_lags_infection_peak() {
        let bump: Vec<u64> = (0..80)
            .map(|t| (1000.0 * (-((t as f64 - 30.0) / 6.0).powi(2)).exp()).round() as u64)
            .collect();
        let latent = LatentTrajectory {
            start: 0,
            infections: bump,
            viral_load: vec![],
            r_values: vec![],
        };
        let inc = DelayDistribution::gamma_default(5.3, 2.0).unwrap();
        let cases: Vec<f64> = (0..80).map(|t| expected_cases(&latent, &inc, 1.0, t)).collect();
        let peak = (0..80).max_by(|a, b| cases[*a].total_cmp(&cases[*b])).unwrap();
        assert!((peak as i64 - 35).abs() <= 1, "{peak}");
    }

    pub(crate) fn toy_params(r0: f64, psi: f64, keys: &[CompartmentKey], init_mean: f64) -> ModelParams {
        let r0map = keys.iter().map(|k| (k.clone(), r0)).collect();
        let effects = EffectSet::new(r0map, vec![]);
        ModelParams {
            dispersion: keys.iter().map(|k| (k.age, psi)).collect(),
            effects,
            reporting_rate: 0.25,
            generation: DelayDistribution::gamma_default(5.5, 2.0).unwrap(),
            incubation: DelayDistribution::gamma_default(5.5, 2.0).unwrap(),
            init_mean,
            latent: BTreeMap::new(),
        }
    }

    fn start() -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 3, 1).unwrap()
    }

    fn empty_cov(locs: &[&str], days: usize) -> CovariatePanel {
        CovariatePanel::empty(start(), days, locs.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    #[test]
    fn critical_process_is_flat() {
        let key = CompartmentKey::new("A", AgeGroup::A15To34);
        let mut params = toy_params(1.0, 1e9, std::slice::from_ref(&key), 6000.0);
        params.latent.insert(
            key.clone(),
            LatentInfections {
                start: -6,
                infections: vec![1000; 6],
            },
        );
        // the first weeks are a transient while the seeded days fill the generation window
        let cov = empty_cov(&["A"], 75);
        let mut early = 0.0;
        let mut late = 0.0;
        for seed in 0..200 {
            let sim = simulate(&params, &cov, 75, Variant::PerIndividual, seed).unwrap();
            let inf = &sim.compartments[0].latent.infections;
            early += inf[SEED_DAYS + 25] as f64;
            late += inf[SEED_DAYS + 74] as f64;
        }
        assert!((late / early - 1.0).abs() < 0.02, "{}", late / early);
    }

    #[test]
    fn branching_growth() {
        let key = CompartmentKey::new("A", AgeGroup::A15To34);
        let mut params = toy_params(2.5, 0.5, std::slice::from_ref(&key), 1.0);
        params.generation = DelayDistribution::point_mass(1).unwrap();
        let mut seeds = vec![0; 6];
        seeds[5] = 10;
        params.latent.insert(key.clone(), LatentInfections { start: -6, infections: seeds });
        let cov = empty_cov(&["A"], 10);
        let mut total = 0.0;
        for seed in 0..500 {
            let sim = simulate(&params, &cov, 10, Variant::PerIndividual, seed).unwrap();
            // panel day 9 is ten generations after the day -1 seed
            total += sim.compartments[0].latent.infections[SEED_DAYS + 9] as f64;
        }
        let mean = total / 500.0;
        let oracle = 10.0 * 2.5f64.powi(10);
        assert!((mean / oracle - 1.0).abs() < 0.15, "{mean} vs {oracle}");
    }

    #[test]
    fn thinning_rate() {
        let key = CompartmentKey::new("A", AgeGroup::A15To34);
        let mut params = toy_params(1.0, 1e6, std::slice::from_ref(&key), 30000.0);
        params.latent.insert(key.clone(), LatentInfections { start: -6, infections: vec![5000; 6] });
        let cov = empty_cov(&["A"], 300);
        let sim = simulate(&params, &cov, 300, Variant::PerIndividual, 11).unwrap();
        let c = &sim.compartments[0];
        let (mut cases, mut shifted) = (0.0, 0.0);
        for t in 20..300 {
            cases += c.sampled_cases[t] as f64;
            shifted += c.expected_cases[t] / 0.25;
        }
        assert!((cases / shifted - 0.25).abs() < 0.01);
    }

    #[test]
    fn invariants_and_determinism() {
        let keys = [
            CompartmentKey::new("A", AgeGroup::A15To34),
            CompartmentKey::new("A", AgeGroup::A35To59),
            CompartmentKey::new("B", AgeGroup::A15To34),
        ];
        let mut params = toy_params(1.3, 0.5, &keys, 20.0);
        params.effects.noise_sd = 0.1;
        params.latent.insert(keys[1].clone(), LatentInfections { start: -6, infections: vec![0; 6] });
        let cov = empty_cov(&["A", "B"], 40);
        let a = simulate(&params, &cov, 40, Variant::PerIndividual, 9).unwrap();
        let b = simulate(&params, &cov, 40, Variant::PerIndividual, 9).unwrap();
        assert_eq!(a, b);

        let zeroed = a.get(&keys[1]).unwrap();
        assert!(zeroed.latent.infections.iter().all(|i| *i == 0));
        assert!(zeroed.sampled_cases.iter().all(|i| *i == 0));
        assert_eq!(zeroed.extinction_day, Some(0));
        // the noise term is shared by the age groups of a location
        let r_a = &a.get(&keys[0]).unwrap().latent.r_values;
        let r_b = &zeroed.latent.r_values;
        assert_eq!(r_a, r_b);

        for c in &a.compartments {
            for t in 0..40 {
                let l = viral_load(&c.latent.infections, &params.generation, t + SEED_DAYS);
                assert!((c.latent.viral_load[t] - l).abs() < 1e-9);
                let e = expected_cases(&c.latent, &params.incubation, 0.25, t as i64);
                assert!((c.expected_cases[t] - e).abs() < 1e-9);
                assert!(c.latent.r_values[t] > 0.0);
            }
        }
    }

    #[test]
    fn missing_covariate_is_named() {
        let key = CompartmentKey::new("A", AgeGroup::A15To34);
        let mut params = toy_params(1.3, 0.5, std::slice::from_ref(&key), 20.0);
        params.effects = EffectSet::new(params.effects.r0.clone(), vec!["lockdown".into()]);
        let mut cov = CovariatePanel::new(
            start(),
            10,
            vec!["A".into()],
            vec![CovariateSpec::new("lockdown", CovariateKind::Dummy)],
        )
        .unwrap();
        for d in 0..10 {
            if d != 4 {
                cov.set("A", d, 0, 0.0).unwrap();
            }
        }
        match simulate(&params, &cov, 10, Variant::PerIndividual, 1) {
            Err(Error::MissingCovariate { compartment, day, covariate }) => {
                assert_eq!(compartment, "A");
                assert_eq!(day, "2020-03-05");
                assert_eq!(covariate, "lockdown");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_horizon() {
        let key = CompartmentKey::new("A", AgeGroup::A15To34);
        let params = toy_params(1.3, 0.5, std::slice::from_ref(&key), 20.0);
        let sim = simulate(&params, &empty_cov(&["A"], 0), 0, Variant::PerIndividual, 1).unwrap();
        assert!(sim.compartments[0].sampled_cases.is_empty());
        assert!(sim.to_case_records(1, 3.0).is_empty());
    }
}

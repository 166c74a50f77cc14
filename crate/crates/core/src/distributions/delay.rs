use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma_lr;

use crate::error::{Error, Result};

/// Tail mass left beyond the automatically chosen lag cap.
pub const DEFAULT_TAIL_MASS: f64 = 1e-7;

/// A probability mass function over integer day lags `1..=l_max`.
///
/// Built from a gamma law with the given mean and standard deviation, or
/// directly from a pmf. `pmf()[0]` is the mass at lag 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayDistribution {
    mean: f64,
    sd: f64,
    pmf: Vec<f64>,
}

impl DelayDistribution {
    /// Discretized gamma with an explicit lag cap. See [`discretize_gamma`].
    pub fn gamma(mean: f64, sd: f64, l_max: usize) -> Result<Self> {
        discretize_gamma(mean, sd, l_max)
    }

    /// Discretized gamma with the lag cap chosen by [`default_lag_cap`].
    pub fn gamma_default(mean: f64, sd: f64) -> Result<Self> {
        check_moments(mean, sd)?;
        discretize_gamma(mean, sd, default_lag_cap(mean, sd))
    }

    /// Normalizes an arbitrary non-negative pmf over lags `1..=pmf.len()`.
    pub fn from_pmf(pmf: Vec<f64>) -> Result<Self> {
        if pmf.is_empty() {
            return Err(Error::invalid("pmf", "empty"));
        }
        if pmf.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid("pmf", "entries must be finite and non-negative"));
        }
        let total: f64 = pmf.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid("pmf", "zero total mass"));
        }
        let pmf: Vec<f64> = pmf.into_iter().map(|p| p / total).collect();
        let (mean, sd) = moments(&pmf);
        Ok(Self { mean, sd, pmf })
    }

    pub fn point_mass(lag: usize) -> Result<Self> {
        if lag == 0 {
            return Err(Error::invalid("lag", "support starts at lag 1"));
        }
        let mut pmf = vec![0.0; lag];
        pmf[lag - 1] = 1.0;
        Self::from_pmf(pmf)
    }

    /// Nominal mean (the gamma mean for gamma-built delays).
    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn sd(&self) -> f64 {
        self.sd
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn l_max(&self) -> usize {
        self.pmf.len()
    }

    /// Mass at `lag`; zero outside `1..=l_max`.
    #[inline]
    pub fn at(&self, lag: usize) -> f64 {
        if lag == 0 || lag > self.pmf.len() {
            0.0
        } else {
            self.pmf[lag - 1]
        }
    }

    /// Mean of the discretized pmf.
    pub fn empirical_mean(&self) -> f64 {
        moments(&self.pmf).0
    }

    pub fn mode(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.pmf.iter().enumerate() {
            if *p > self.pmf[best] {
                best = i;
            }
        }
        best + 1
    }
}

fn moments(pmf: &[f64]) -> (f64, f64) {
    let mean: f64 = pmf.iter().enumerate().map(|(i, p)| (i + 1) as f64 * p).sum();
    let var: f64 = pmf
        .iter()
        .enumerate()
        .map(|(i, p)| ((i + 1) as f64 - mean).powi(2) * p)
        .sum();
    (mean, var.sqrt())
}

fn check_moments(mean: f64, sd: f64) -> Result<()> {
    if !(mean.is_finite() && mean > 0.0) {
        return Err(Error::invalid("mean", format!("must be positive, got {mean}")));
    }
    if !(sd.is_finite() && sd > 0.0) {
        return Err(Error::invalid("sd", format!("must be positive, got {sd}")));
    }
    Ok(())
}

/// Gamma CDF under the mean/sd parametrization.
pub fn gamma_cdf(mean: f64, sd: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let shape = (mean / sd).powi(2);
    let scale = sd * sd / mean;
    if shape > 1e5 {
        // Wilson-Hilferty; the incomplete gamma series is slow and unstable here.
        let v = 1.0 / (9.0 * shape);
        let z = ((x / (shape * scale)).cbrt() - (1.0 - v)) / v.sqrt();
        0.5 * erfc(-z / std::f64::consts::SQRT_2)
    } else {
        gamma_lr(shape, x / scale)
    }
}

/// Smallest lag cap of at least `ceil(mean + 6 sd)` whose truncated tail is
/// below [`DEFAULT_TAIL_MASS`].
pub fn default_lag_cap(mean: f64, sd: f64) -> usize {
    let mut l = (mean + 6.0 * sd).ceil().max(1.0) as usize;
    while 1.0 - gamma_cdf(mean, sd, l as f64 + 0.5) >= DEFAULT_TAIL_MASS && l < 10_000 {
        l += 1;
    }
    l
}

/// Moment-matched gamma law discretized onto lags `1..=l_max`.
///
/// Lag `l` receives the gamma mass on `(l - 0.5, l + 0.5]`; lag 1 also absorbs
/// `(0, 0.5]`. The result is renormalized after truncation at `l_max`.
pub fn discretize_gamma(mean: f64, sd: f64, l_max: usize) -> Result<DelayDistribution> {
    check_moments(mean, sd)?;
    let required = (mean + 4.0 * sd).ceil() as usize;
    if l_max < required {
        return Err(Error::Truncation {
            mean,
            sd,
            l_max,
            required,
        });
    }
    let mut pmf = Vec::with_capacity(l_max);
    let mut prev = 0.0;
    for l in 1..=l_max {
        let upper = gamma_cdf(mean, sd, l as f64 + 0.5);
        pmf.push((upper - prev).max(0.0));
        prev = upper;
    }
    let total: f64 = pmf.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("l_max", "no gamma mass on the lag grid"));
    }
    for p in &mut pmf {
        *p /= total;
    }
    Ok(DelayDistribution { mean, sd, pmf })
}

/// Pmf over signed integer lags, `pmf[0]` at `min_lag`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedPmf {
    pub min_lag: i64,
    pub pmf: Vec<f64>,
}

impl SignedPmf {
    pub fn at(&self, lag: i64) -> f64 {
        let idx = lag - self.min_lag;
        if idx < 0 || idx as usize >= self.pmf.len() {
            0.0
        } else {
            self.pmf[idx as usize]
        }
    }

    pub fn total(&self) -> f64 {
        self.pmf.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.iter().map(|(lag, p)| lag as f64 * p).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.pmf
            .iter()
            .enumerate()
            .map(move |(i, p)| (self.min_lag + i as i64, *p))
    }
}

/// Share of transmissions that happen before the infector's symptom onset,
/// with generation time and incubation period independent. Ties count half.
pub fn presymptomatic_fraction(generation: &DelayDistribution, incubation: &DelayDistribution) -> f64 {
    // survival[s] = P(S > s)
    let ls = incubation.l_max();
    let mut survival = vec![0.0; ls + 2];
    for s in (0..=ls).rev() {
        survival[s] = survival[s + 1] + incubation.at(s + 1);
    }
    generation
        .pmf()
        .iter()
        .enumerate()
        .map(|(i, pg)| {
            let g = i + 1;
            let later = if g <= ls { survival[g] } else { 0.0 };
            pg * (later + 0.5 * incubation.at(g))
        })
        .sum()
}

/// Serial interval `G + S2 - S1` with generation time `G` and two
/// independent incubation periods.
pub fn serial_interval(generation: &DelayDistribution, incubation: &DelayDistribution) -> SignedPmf {
    let ls = incubation.l_max() as i64;
    // S2 - S1 on -(ls-1)..=(ls-1)
    let width = (2 * ls - 1) as usize;
    let mut diff = vec![0.0; width];
    for (i, p1) in incubation.pmf().iter().enumerate() {
        for (j, p2) in incubation.pmf().iter().enumerate() {
            diff[(j as i64 - i as i64 + ls - 1) as usize] += p1 * p2;
        }
    }
    let lg = generation.l_max();
    let mut pmf = vec![0.0; width + lg - 1];
    for (g, pg) in generation.pmf().iter().enumerate() {
        for (d, pd) in diff.iter().enumerate() {
            pmf[g + d] += pg * pd;
        }
    }
    SignedPmf {
        min_lag: 1 - (ls - 1),
        pmf,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_pmf_matches_mean() {
        let d = discretize_gamma(5.5, 2.0, 25).unwrap();
        assert!((d.pmf().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((d.empirical_mean() - 5.5).abs() < 0.05, "{}", d.empirical_mean());
    }

    #[test]
    fn gamma_mode_from_cdf_differences() {
        // Oracle: argmax over centred unit intervals of the gamma CDF, computed
        // independently with the regularized incomplete gamma function.
        let (mean, sd): (f64, f64) = (5.84, 2.0);
        let shape = (mean / sd).powi(2);
        let scale = sd * sd / mean;
        let cdf = |x: f64| if x <= 0.0 { 0.0 } else { gamma_lr(shape, x / scale) };
        let oracle = (1..=25)
            .map(|l| {
                let lo = if l == 1 { 0.0 } else { l as f64 - 0.5 };
                (l, cdf(l as f64 + 0.5) - cdf(lo))
            })
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(oracle, 5);
        assert_eq!(discretize_gamma(mean, sd, 25).unwrap().mode(), 5);
    }

    #[test]
    fn degenerate_gamma_is_point_mass() {
        let d = discretize_gamma(1.0, 1e-6, 5).unwrap();
        assert!((d.at(1) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(discretize_gamma(0.0, 1.0, 10), Err(Error::InvalidParameter { .. })));
        assert!(matches!(discretize_gamma(5.0, -1.0, 10), Err(Error::InvalidParameter { .. })));
        assert!(matches!(discretize_gamma(5.5, 2.0, 10), Err(Error::Truncation { required: 14, .. })));
    }

    #[test]
    fn default_cap_tail_small() {
        for &(m, s) in &[(5.5, 2.0), (5.84, 2.0), (5.3, 2.0), (3.0, 1.5), (10.0, 4.0)] {
            let l = default_lag_cap(m, s);
            assert!(1.0 - gamma_cdf(m, s, l as f64 + 0.5) < 1e-6);
            let d = DelayDistribution::gamma_default(m, s).unwrap();
            assert!(d.pmf().iter().all(|p| *p >= 0.0));
        }
    }

    #[test]
    fn long_cap_mean_close() {
        for &(m, s) in &[(5.5f64, 2.0f64), (3.0, 1.0), (8.0, 3.0), (2.0, 0.5)] {
            let l = (m + 6.0 * s).ceil() as usize;
            let d = discretize_gamma(m, s, l).unwrap();
            assert!((d.empirical_mean() - m).abs() < 0.05, "{m} {s} {}", d.empirical_mean());
        }
    }

    #[test]
    fn presymptomatic_reference_delays() {
        let gen = DelayDistribution::gamma_default(5.84, 2.0).unwrap();
        let inc = DelayDistribution::gamma_default(5.30, 2.0).unwrap();
        let f = presymptomatic_fraction(&gen, &inc);
        assert!((f - 0.42).abs() < 0.02, "{f}");
    }

    #[test]
    fn presymptomatic_symmetric_and_degenerate() {
        let d = DelayDistribution::gamma_default(5.5, 2.0).unwrap();
        assert!((presymptomatic_fraction(&d, &d) - 0.5).abs() < 1e-12);
        let g = DelayDistribution::point_mass(10).unwrap();
        let s = DelayDistribution::point_mass(1).unwrap();
        assert_eq!(presymptomatic_fraction(&g, &s), 0.0);
    }

    #[test]
    fn serial_interval_properties() {
        let gen = DelayDistribution::gamma_default(5.84, 2.0).unwrap();
        let inc = DelayDistribution::gamma_default(5.30, 2.0).unwrap();
        let si = serial_interval(&gen, &inc);
        assert!((si.total() - 1.0).abs() < 1e-9);
        assert!((si.mean() - gen.empirical_mean()).abs() < 1e-9);
        assert!((gen.empirical_mean() - 5.84).abs() < 0.05);
        // serial intervals can be negative
        assert!(si.at(-1) > 0.0);

        let point = DelayDistribution::point_mass(4).unwrap();
        let si = serial_interval(&gen, &point);
        for lag in 1..=gen.l_max() as i64 {
            assert!((si.at(lag) - gen.at(lag as usize)).abs() < 1e-15);
        }
        assert_eq!(si.at(0), 0.0);
    }
}

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::model::SEED_DAYS;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Prior distributions of the renewal model. Defaults follow the published
/// prior table; the R0 prior is not part of that table and is a weakly
/// informative positive normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    /// Sd of the normal prior on every covariate effect.
    pub beta_sd: f64,
    /// Sd of the multiplicative error term; 0 disables the term.
    pub noise_sd: f64,
    /// Reporting rate, held fixed unless `reporting_rate_beta` is set.
    pub reporting_rate: f64,
    /// Beta(a, b) prior placing the reporting rate under inference.
    pub reporting_rate_beta: Option<(f64, f64)>,
    /// Normal prior on the generation-time and incubation means.
    pub delay_mean: f64,
    pub delay_mean_sd: f64,
    /// Fixed sd of both delay distributions.
    pub delay_sd: f64,
    /// Scale of the positive normal prior (location 0) on each dispersion.
    pub dispersion_scale: f64,
    /// Positive normal prior on the expected number of seeded infections.
    pub init_mean_loc: f64,
    pub init_mean_scale: f64,
    /// Positive normal prior on each baseline reproductive number.
    pub r0_loc: f64,
    pub r0_scale: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            beta_sd: 0.2,
            noise_sd: 0.1,
            reporting_rate: 0.25,
            reporting_rate_beta: None,
            delay_mean: 5.5,
            delay_mean_sd: 0.1,
            delay_sd: 2.0,
            dispersion_scale: 5.0,
            init_mean_loc: 4.0,
            init_mean_scale: 4.0,
            r0_loc: 2.5,
            r0_scale: 2.0,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("beta_sd", self.beta_sd),
            ("delay_mean", self.delay_mean),
            ("delay_mean_sd", self.delay_mean_sd),
            ("delay_sd", self.delay_sd),
            ("dispersion_scale", self.dispersion_scale),
            ("init_mean_scale", self.init_mean_scale),
            ("r0_scale", self.r0_scale),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("prior `{name}` must be positive, got {v}")));
            }
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Config("prior `noise_sd` must be non-negative".into()));
        }
        if !(self.reporting_rate > 0.0 && self.reporting_rate <= 1.0) {
            return Err(Error::Config("`reporting_rate` must lie in (0, 1]".into()));
        }
        if let Some((a, b)) = self.reporting_rate_beta {
            if !(a > 0.0 && b > 0.0) {
                return Err(Error::Config("reporting-rate beta prior needs positive shapes".into()));
            }
        }
        Ok(())
    }

    pub fn noise_enabled(&self) -> bool {
        self.noise_sd > 0.0
    }

    pub fn ln_beta(&self, b: f64) -> f64 {
        ln_normal(b, 0.0, self.beta_sd)
    }

    pub fn ln_noise(&self, e: f64) -> f64 {
        if !(e > -1.0) {
            return f64::NEG_INFINITY;
        }
        ln_normal(e, 0.0, self.noise_sd) - ln_upper_mass(-1.0, 0.0, self.noise_sd)
    }

    pub fn ln_delay_mean(&self, mu: f64) -> f64 {
        if !(mu > 0.0) {
            return f64::NEG_INFINITY;
        }
        ln_normal(mu, self.delay_mean, self.delay_mean_sd)
    }

    pub fn ln_dispersion(&self, psi: f64) -> f64 {
        ln_positive_normal(psi, 0.0, self.dispersion_scale)
    }

    pub fn ln_init_mean(&self, m: f64) -> f64 {
        ln_positive_normal(m, self.init_mean_loc, self.init_mean_scale)
    }

    pub fn ln_r0(&self, r0: f64) -> f64 {
        ln_positive_normal(r0, self.r0_loc, self.r0_scale)
    }

    pub fn ln_reporting_rate(&self, r: f64) -> f64 {
        match self.reporting_rate_beta {
            None => 0.0,
            Some((a, b)) => {
                if !(r > 0.0 && r < 1.0) {
                    return f64::NEG_INFINITY;
                }
                (a - 1.0) * r.ln() + (b - 1.0) * (-r).ln_1p() - ln_beta_fn(a, b)
            }
        }
    }
}

fn ln_beta_fn(a: f64, b: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

pub(crate) fn ln_normal(x: f64, mu: f64, sd: f64) -> f64 {
    let z = (x - mu) / sd;
    -LN_SQRT_2PI - sd.ln() - 0.5 * z * z
}

/// ln P(X > lower) for X ~ N(mu, sd).
fn ln_upper_mass(lower: f64, mu: f64, sd: f64) -> f64 {
    (0.5 * erfc((lower - mu) / (sd * std::f64::consts::SQRT_2))).ln()
}

/// Normal density truncated to the positive half-line.
pub(crate) fn ln_positive_normal(x: f64, mu: f64, sd: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NEG_INFINITY;
    }
    ln_normal(x, mu, sd) - ln_upper_mass(0.0, mu, sd)
}

/// ln P(round(E) = count) for E exponential with the given mean.
pub fn ln_seed_pmf(count: u64, mean: f64) -> f64 {
    let rate = 1.0 / mean;
    if count == 0 {
        // P(E < 1/2)
        return (-(-0.5 * rate).exp_m1()).ln().max(f64::MIN);
    }
    // exp(-rate (k - 1/2)) - exp(-rate (k + 1/2))
    let k = count as f64;
    -rate * (k - 0.5) + (-(-rate).exp_m1()).ln()
}

/// Expected infections per seeded day.
pub fn seed_day_mean(init_mean: f64) -> f64 {
    init_mean / SEED_DAYS as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_pmf_normalized() {
        for mean in [0.3, 1.0, 4.0 / 6.0, 7.5] {
            let total: f64 = (0..2000).map(|k| ln_seed_pmf(k, mean).exp()).sum();
            assert!((total - 1.0).abs() < 1e-12, "{mean}: {total}");
            // oracle: direct CDF differences
            let cdf = |x: f64| 1.0 - (-x / mean).exp();
            for k in 1..5u64 {
                let p = cdf(k as f64 + 0.5) - cdf(k as f64 - 0.5);
                assert!((ln_seed_pmf(k, mean).exp() - p).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn truncated_densities_integrate_to_one() {
        let p = PriorConfig::default();
        let h = 1e-3;
        let integral = |f: &dyn Fn(f64) -> f64, hi: f64| (0..(hi / h) as usize).map(|i| f((i as f64 + 0.5) * h).exp() * h).sum::<f64>();
        assert!((integral(&|x| p.ln_dispersion(x), 60.0) - 1.0).abs() < 1e-4);
        assert!((integral(&|x| p.ln_init_mean(x), 60.0) - 1.0).abs() < 1e-4);
        assert!((integral(&|x| p.ln_r0(x), 30.0) - 1.0).abs() < 1e-4);
        assert_eq!(p.ln_dispersion(-1.0), f64::NEG_INFINITY);
        assert_eq!(p.ln_noise(-1.0), f64::NEG_INFINITY);
    }

    #[test]
    fn beta_prior_for_rate() {
        let p = PriorConfig {
            reporting_rate_beta: Some((2.0, 6.0)),
            ..Default::default()
        };
        let h = 1e-4;
        let total: f64 = (0..10_000).map(|i| p.ln_reporting_rate((i as f64 + 0.5) * h).exp() * h).sum();
        assert!((total - 1.0).abs() < 1e-4);
    }
}

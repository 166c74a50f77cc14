use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use statrs::function::factorial::ln_factorial;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

fn check(mean: f64, dispersion: f64) -> Result<()> {
    if !(dispersion > 0.0) || dispersion.is_nan() {
        return Err(Error::invalid("dispersion", format!("must be positive, got {dispersion}")));
    }
    if !(mean >= 0.0) || !mean.is_finite() {
        return Err(Error::invalid("mean", format!("must be non-negative, got {mean}")));
    }
    Ok(())
}

/// Log-pmf of the negative binomial with the given mean and dispersion
/// (variance `mean * (1 + mean / dispersion)`). Mean zero is a point mass at 0.
pub fn nb_logpmf(count: u64, mean: f64, dispersion: f64) -> Result<f64> {
    check(mean, dispersion)?;
    Ok(nb_ln_pmf(count, mean, dispersion))
}

/// Unchecked [`nb_logpmf`] for hot loops.
#[inline]
pub fn nb_ln_pmf(count: u64, mean: f64, dispersion: f64) -> f64 {
    if mean <= 0.0 {
        return if count == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let k = dispersion;
    let x = count as f64;
    let rising = if count < 8 {
        (0..count).map(|i| (k + i as f64).ln()).sum::<f64>()
    } else {
        ln_gamma(k + x) - ln_gamma(k)
    };
    let zero_term = -k * (mean / k).ln_1p();
    let count_term = if count == 0 {
        0.0
    } else {
        x * (mean / (k + mean)).ln()
    };
    rising - ln_factorial(count) + zero_term + count_term
}

#[inline]
pub fn poisson_ln_pmf(count: u64, rate: f64) -> f64 {
    if rate <= 0.0 {
        return if count == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    count as f64 * rate.ln() - rate - ln_factorial(count)
}

/// Draws from the negative binomial as a gamma-Poisson mixture.
pub fn nb_sample<R: Rng + ?Sized>(mean: f64, dispersion: f64, rng: &mut R) -> Result<u64> {
    check(mean, dispersion)?;
    Ok(nb_draw(mean, dispersion, rng))
}

/// Unchecked [`nb_sample`].
pub fn nb_draw<R: Rng + ?Sized>(mean: f64, dispersion: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let rate = match Gamma::new(dispersion, mean / dispersion) {
        Ok(g) => g.sample(rng),
        Err(_) => return 0,
    };
    poisson_draw(rate, rng)
}

pub fn poisson_draw<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> u64 {
    if !(rate > 0.0) {
        return 0;
    }
    match Poisson::new(rate) {
        Ok(p) => p.sample(rng) as u64,
        Err(_) => 0,
    }
}

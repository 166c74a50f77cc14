use serde::Serialize;

use super::negbin::nb_ln_pmf;
use crate::error::{Error, Result};

/// Probability mass left unenumerated when building offspring statistics.
const ENUMERATION_TAIL: f64 = 1e-10;

/// Derived statistics of a negative binomial offspring law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OffspringSummary {
    pub r_mean: f64,
    pub dispersion: f64,
    /// Probability that a primary case infects nobody.
    pub zero_fraction: f64,
    pub infecting_ratio: f64,
    /// Share of all secondary infections caused by the most infectious `q`
    /// fraction of primary cases.
    pub top_share: f64,
    pub q: f64,
    pub variance_mean_ratio: f64,
    /// Set when `r_mean == 0`; `top_share` is then reported as 0.
    pub degenerate: bool,
}

pub fn variance_mean_ratio(r_mean: f64, dispersion: f64) -> f64 {
    1.0 + r_mean / dispersion
}

pub fn offspring_summary(r_mean: f64, dispersion: f64, q: f64) -> Result<OffspringSummary> {
    if !(dispersion > 0.0 && dispersion.is_finite()) {
        return Err(Error::invalid("dispersion", format!("must be positive, got {dispersion}")));
    }
    if !(r_mean >= 0.0 && r_mean.is_finite()) {
        return Err(Error::invalid("r_mean", format!("must be non-negative, got {r_mean}")));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::invalid("q", format!("must lie in (0, 1), got {q}")));
    }
    if r_mean == 0.0 {
        return Ok(OffspringSummary {
            r_mean,
            dispersion,
            zero_fraction: 1.0,
            infecting_ratio: 0.0,
            top_share: 0.0,
            q,
            variance_mean_ratio: 1.0,
            degenerate: true,
        });
    }

    let mut pmf = Vec::new();
    let mut cumulative = 0.0;
    while cumulative < 1.0 - ENUMERATION_TAIL && pmf.len() < 50_000_000 {
        let p = nb_ln_pmf(pmf.len() as u64, r_mean, dispersion).exp();
        cumulative += p;
        pmf.push(p);
    }
    let total_offspring: f64 = pmf.iter().enumerate().map(|(x, p)| x as f64 * p).sum();

    // Walk down from the largest counts, splitting the boundary count's mass.
    let mut remaining = q;
    let mut top_offspring = 0.0;
    for (x, p) in pmf.iter().enumerate().rev() {
        let take = p.min(remaining);
        top_offspring += take * x as f64;
        remaining -= take;
        if remaining <= 0.0 {
            break;
        }
    }

    Ok(OffspringSummary {
        r_mean,
        dispersion,
        zero_fraction: pmf[0],
        infecting_ratio: 1.0 - pmf[0],
        top_share: (top_offspring / total_offspring).min(1.0),
        q,
        variance_mean_ratio: variance_mean_ratio(r_mean, dispersion),
        degenerate: false,
    })
}

/// Dispersion summary of a negative binomial mixture with equal component means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MixtureDispersion {
    pub variance_mean_ratio: f64,
    /// Single-component dispersion with the same variance/mean ratio.
    pub equivalent_dispersion: f64,
}

impl MixtureDispersion {
    /// The reciprocal ratio, mean over variance.
    pub fn mean_variance_ratio(&self) -> f64 {
        1.0 / self.variance_mean_ratio
    }
}

/// Dispersion of a pure negative binomial with the given variance/mean ratio.
pub fn equivalent_dispersion_from_ratio(variance_mean_ratio: f64, r_mean: f64) -> Result<f64> {
    if !(r_mean > 0.0) {
        return Err(Error::invalid("r_mean", "must be positive"));
    }
    if !(variance_mean_ratio > 1.0) {
        return Err(Error::Underdispersed(variance_mean_ratio));
    }
    // psi = mean^2 / (variance - mean)
    Ok(r_mean / (variance_mean_ratio - 1.0))
}

pub fn mixture_equivalent_dispersion(
    weights: &[f64],
    dispersions: &[f64],
    r_mean: f64,
) -> Result<MixtureDispersion> {
    if weights.len() != dispersions.len() || weights.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} dispersions",
            weights.len(),
            dispersions.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("weights", "must be non-negative and sum to 1"));
    }
    if dispersions.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::invalid("dispersions", "must be positive"));
    }
    if !(r_mean > 0.0) {
        return Err(Error::invalid("r_mean", "must be positive"));
    }
    let variance: f64 = weights
        .iter()
        .zip(dispersions)
        .map(|(w, psi)| w * r_mean * variance_mean_ratio(r_mean, *psi))
        .sum();
    let ratio = variance / r_mean;
    Ok(MixtureDispersion {
        variance_mean_ratio: ratio,
        equivalent_dispersion: equivalent_dispersion_from_ratio(ratio, r_mean)?,
    })
}

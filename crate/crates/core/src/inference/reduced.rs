//! Dispersion from the cross-unit variance of growth rates.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::diagnostics::quantile_sorted;
use crate::error::{Error, Result};
use crate::rng::stream_rng;

pub const MIN_UNITS: usize = 3;
pub const DEFAULT_BOOTSTRAP: usize = 1000;

/// Counts of one unit in two consecutive periods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthObservation {
    pub unit: String,
    pub group: String,
    pub period: String,
    pub previous: u64,
    pub current: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReducedFormEstimate {
    pub group: String,
    pub period: String,
    /// Infinite when the estimate is not estimable.
    pub psi_hat: f64,
    pub ci: (f64, f64),
    pub r_hat_used: f64,
    /// Count-weighted growth variance, `sum_u i_u (g_u - R)^2 / (n - 1)`.
    pub scaled_variance: f64,
    pub mean_previous: f64,
    pub n_units: usize,
    /// False when the scaled variance does not exceed the mean growth rate.
    pub estimable: bool,
}

/// `(R, V, psi)` for `(previous, rate)` pairs.
fn point_estimate(units: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = units.len() as f64;
    let r = units.iter().map(|u| u.1).sum::<f64>() / n;
    let v = units.iter().map(|(i, g)| i * (g - r).powi(2)).sum::<f64>() / (n - 1.0);
    let psi = if v > r { r * r / (v - r) } else { f64::INFINITY };
    (r, v, psi)
}

/// One estimate per (group, period). Units with no prior-period count are
/// dropped; `bootstrap_n` unit resamples give a percentile interval.
pub fn estimate_dispersion_reduced(
    observations: &[GrowthObservation],
    bootstrap_n: usize,
    seed: u64,
) -> Result<Vec<ReducedFormEstimate>> {
    let mut cells: BTreeMap<(&str, &str), Vec<(f64, f64)>> = BTreeMap::new();
    for o in observations {
        let cell = cells.entry((o.group.as_str(), o.period.as_str())).or_default();
        if o.previous > 0 {
            cell.push((o.previous as f64, o.current as f64 / o.previous as f64));
        }
    }
    let mut out = Vec::with_capacity(cells.len());
    for (k, ((group, period), mut units)) in cells.into_iter().enumerate() {
        if units.len() < MIN_UNITS {
            return Err(Error::TooFewUnits {
                group: format!("{group}/{period}"),
                n: units.len(),
                min: MIN_UNITS,
            });
        }
        // order by value so results do not depend on unit labels
        units.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let (r, v, psi) = point_estimate(&units);
        let mut rng = stream_rng(seed, k as u64);
        let mut boot = Vec::with_capacity(bootstrap_n);
        let mut sample = vec![(0.0, 0.0); units.len()];
        for _ in 0..bootstrap_n {
            for s in sample.iter_mut() {
                *s = units[rng.random_range(0..units.len())];
            }
            boot.push(point_estimate(&sample).2);
        }
        boot.sort_by(f64::total_cmp);
        let ci = if boot.is_empty() {
            (psi, psi)
        } else {
            (
                quantile_sorted(&boot, 0.025).min(psi),
                quantile_sorted(&boot, 0.975).max(psi),
            )
        };
        out.push(ReducedFormEstimate {
            group: group.to_string(),
            period: period.to_string(),
            psi_hat: psi,
            ci,
            r_hat_used: r,
            scaled_variance: v,
            mean_previous: units.iter().map(|u| u.0).sum::<f64>() / units.len() as f64,
            n_units: units.len(),
            estimable: psi.is_finite(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::summary::predicted_growth_variance;
    use crate::renewal::Variant;

    fn obs(unit: &str, previous: u64, current: u64) -> GrowthObservation {
        GrowthObservation {
            unit: unit.into(),
            group: "g".into(),
            period: "p".into(),
            previous,
            current,
        }
    }

    #[test]
    fn deterministic_growth_not_estimable() {
        let o: Vec<_> = (0..5).map(|u| obs(&u.to_string(), 100, 150)).collect();
        let e = &estimate_dispersion_reduced(&o, 50, 1).unwrap()[0];
        assert!(!e.estimable);
        assert_eq!(e.scaled_variance, 0.0);
        assert!((e.r_hat_used - 1.5).abs() < 1e-12);
    }

    #[test]
    fn too_few_units() {
        let o = vec![obs("a", 10, 12), obs("b", 10, 9), obs("c", 0, 4)];
        assert!(matches!(estimate_dispersion_reduced(&o, 10, 1), Err(Error::TooFewUnits { n: 2, .. })));
    }

    #[test]
    fn inverts_growth_variance_formula() {
        // two units at equal counts with rates R +- d reproduce sigma^2 exactly
        let (r, psi, i) = (1.0, 0.25, 400.0);
        let var = predicted_growth_variance(r, psi, i, Variant::PerIndividual).unwrap();
        let d = (var / 2.0f64).sqrt();
        let units = vec![(i, r - d), (i, r + d), (i, r - d), (i, r + d)];
        // sample variance with n - 1 = 3 of four +-d points is 4 d^2 / 3
        let (_, v, p) = point_estimate(&units);
        assert!((v - i * 4.0 * d * d / 3.0).abs() < 1e-9);
        let expected = r * r / (i * 4.0 * d * d / 3.0 - r);
        assert!((p - expected).abs() < 1e-9);
    }

    #[test]
    fn relabel_and_zero_unit_invariance() {
        let base: Vec<_> = [(120, 90), (400, 620), (250, 260), (800, 500), (150, 240)]
            .iter()
            .enumerate()
            .map(|(u, &(a, b))| obs(&format!("u{u}"), a, b))
            .collect();
        let a = estimate_dispersion_reduced(&base, 200, 4).unwrap();
        let mut relabeled: Vec<_> = base
            .iter()
            .rev()
            .map(|o| GrowthObservation {
                unit: format!("x-{}", o.unit),
                ..o.clone()
            })
            .collect();
        relabeled.push(obs("empty", 0, 0));
        let b = estimate_dispersion_reduced(&relabeled, 200, 4).unwrap();
        assert_eq!(a, b);
        assert!(a[0].ci.0 <= a[0].psi_hat && a[0].psi_hat <= a[0].ci.1);
    }
}

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovariateKind {
    /// 0/1 indicator.
    Dummy,
    /// Real-valued, used on its natural scale.
    Real,
    /// Real-valued, centred and scaled over the estimation sample.
    Standardized,
}

impl CovariateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CovariateKind::Dummy => "dummy",
            CovariateKind::Real => "real",
            CovariateKind::Standardized => "standardized",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "dummy" => Ok(CovariateKind::Dummy),
            "real" => Ok(CovariateKind::Real),
            "standardized" => Ok(CovariateKind::Standardized),
            other => Err(Error::Config(format!("unknown covariate kind `{other}`"))),
        }
    }
}

/// Centre and scale used to standardize a covariate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub sd: f64,
}

impl Standardization {
    #[inline]
    pub fn apply(&self, raw: f64) -> f64 {
        (raw - self.mean) / self.sd
    }

    #[inline]
    pub fn invert(&self, z: f64) -> f64 {
        z * self.sd + self.mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    pub kind: CovariateKind,
    pub stats: Option<Standardization>,
}

impl CovariateSpec {
    pub fn new(name: impl Into<String>, kind: CovariateKind) -> Self {
        Self {
            name: name.into(),
            kind,
            stats: None,
        }
    }
}

/// Daily covariate values per location. Missing entries are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariatePanel {
    start: NaiveDate,
    n_days: usize,
    specs: Vec<CovariateSpec>,
    locations: Vec<String>,
    // [location][day * n_cov + j]
    values: Vec<Vec<f64>>,
}

impl CovariatePanel {
    pub fn new(
        start: NaiveDate,
        n_days: usize,
        locations: Vec<String>,
        specs: Vec<CovariateSpec>,
    ) -> Result<Self> {
        let mut sorted = locations.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != locations.len() {
            return Err(Error::Config("duplicate location in covariate panel".into()));
        }
        for (i, s) in specs.iter().enumerate() {
            if specs[..i].iter().any(|o| o.name == s.name) {
                return Err(Error::Config(format!("duplicate covariate `{}`", s.name)));
            }
        }
        let width = n_days * specs.len();
        Ok(Self {
            start,
            n_days,
            values: vec![vec![f64::NAN; width]; sorted.len()],
            specs,
            locations: sorted,
        })
    }

    /// A panel with no covariates; every day is trivially complete.
    pub fn empty(start: NaiveDate, n_days: usize, locations: Vec<String>) -> Result<Self> {
        Self::new(start, n_days, locations, Vec::new())
    }

    pub fn start(&self) -> NaiveDate {
        self.start
    }

    pub fn n_days(&self) -> usize {
        self.n_days
    }

    pub fn n_covariates(&self) -> usize {
        self.specs.len()
    }

    pub fn specs(&self) -> &[CovariateSpec] {
        &self.specs
    }

    pub fn names(&self) -> Vec<&str> {
        self.specs.iter().map(|s| s.name.as_str()).collect()
    }

    pub fn locations(&self) -> &[String] {
        &self.locations
    }

    pub fn date(&self, day: usize) -> NaiveDate {
        self.start + Duration::days(day as i64)
    }

    pub fn day_of(&self, date: NaiveDate) -> Option<usize> {
        let d = (date - self.start).num_days();
        (d >= 0 && (d as usize) < self.n_days).then_some(d as usize)
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.specs
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| Error::UnknownCovariate(name.to_string()))
    }

    pub fn location_index(&self, location: &str) -> Option<usize> {
        self.locations.binary_search_by(|l| l.as_str().cmp(location)).ok()
    }

    fn loc(&self, location: &str) -> Result<usize> {
        self.location_index(location)
            .ok_or_else(|| Error::Config(format!("location `{location}` not in covariate panel")))
    }

    pub fn set(&mut self, location: &str, day: usize, covariate: usize, value: f64) -> Result<()> {
        let l = self.loc(location)?;
        if day >= self.n_days || covariate >= self.specs.len() {
            return Err(Error::DimensionMismatch(format!(
                "day {day} / covariate {covariate} outside {}x{}",
                self.n_days,
                self.specs.len()
            )));
        }
        let j = self.specs.len();
        self.values[l][day * j + covariate] = value;
        Ok(())
    }

    pub fn get(&self, location: &str, day: usize, covariate: usize) -> Option<f64> {
        let l = self.location_index(location)?;
        self.get_at(l, day, covariate)
    }

    pub fn get_at(&self, loc: usize, day: usize, covariate: usize) -> Option<f64> {
        let j = self.specs.len();
        let v = *self.values.get(loc)?.get(day * j + covariate)?;
        (!v.is_nan()).then_some(v)
    }

    /// All covariates of `(location index, day)`, possibly containing NaN.
    #[inline]
    pub fn row(&self, loc: usize, day: usize) -> &[f64] {
        let j = self.specs.len();
        &self.values[loc][day * j..(day + 1) * j]
    }

    /// Fails on the first missing value among `locations` over `n_days` days.
    pub fn check_complete(&self, locations: &[&str], n_days: usize) -> Result<()> {
        for loc in locations {
            let Some(l) = self.location_index(loc) else {
                if self.specs.is_empty() {
                    continue;
                }
                return Err(Error::MissingCovariate {
                    compartment: loc.to_string(),
                    day: self.date(0).to_string(),
                    covariate: self.specs[0].name.clone(),
                });
            };
            for day in 0..n_days {
                for (j, spec) in self.specs.iter().enumerate() {
                    let v = if day < self.n_days { self.row(l, day)[j] } else { f64::NAN };
                    if v.is_nan() {
                        return Err(Error::MissingCovariate {
                            compartment: loc.to_string(),
                            day: self.date(day).to_string(),
                            covariate: spec.name.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Dummies must be 0/1.
    pub fn validate(&self) -> Result<()> {
        for (j, spec) in self.specs.iter().enumerate() {
            if spec.kind != CovariateKind::Dummy {
                continue;
            }
            for l in 0..self.locations.len() {
                for day in 0..self.n_days {
                    let v = self.row(l, day)[j];
                    if !v.is_nan() && v != 0.0 && v != 1.0 {
                        return Err(Error::Validation {
                            path: "covariates".into(),
                            line: 0,
                            message: format!(
                                "dummy `{}` has value {v} at {} on {}",
                                spec.name,
                                self.locations[l],
                                self.date(day)
                            ),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Observed (min, max) of covariate `j`; `None` when all values are missing.
    pub fn range(&self, covariate: usize) -> Option<(f64, f64)> {
        self.values_of(covariate).fold(None, |acc, v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
    }

    /// Observed range of covariate `j` at one location.
    pub fn range_at(&self, loc: usize, covariate: usize) -> Option<(f64, f64)> {
        (0..self.n_days)
            .map(|d| self.row(loc, d)[covariate])
            .filter(|v| !v.is_nan())
            .fold(None, |acc, v| match acc {
                None => Some((v, v)),
                Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
            })
    }

    fn values_of(&self, covariate: usize) -> impl Iterator<Item = f64> + '_ {
        let j = self.specs.len();
        self.values
            .iter()
            .flat_map(move |row| (0..self.n_days).map(move |d| row[d * j + covariate]))
            .filter(|v| !v.is_nan())
    }

    /// Centres and scales `covariate` by its in-sample mean and standard
    /// deviation (population form), recording the statistics.
    pub fn standardize(&self, covariate: &str) -> Result<CovariatePanel> {
        let j = self.index_of(covariate)?;
        let (n, sum) = self.values_of(j).fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
        if n == 0 {
            return Err(Error::DegenerateCovariate(covariate.to_string()));
        }
        let mean = sum / n as f64;
        let var = self.values_of(j).map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        if !(sd > 1e-12 * mean.abs().max(1.0)) {
            return Err(Error::DegenerateCovariate(covariate.to_string()));
        }
        self.apply_standardization(covariate, Standardization { mean, sd })
    }

    /// Applies stored standardization statistics (out-of-sample reuse).
    pub fn apply_standardization(&self, covariate: &str, stats: Standardization) -> Result<CovariatePanel> {
        let j = self.index_of(covariate)?;
        if !(stats.sd > 0.0) {
            return Err(Error::DegenerateCovariate(covariate.to_string()));
        }
        let mut out = self.clone();
        let width = self.specs.len();
        for row in &mut out.values {
            for d in 0..self.n_days {
                let v = &mut row[d * width + j];
                if !v.is_nan() {
                    *v = stats.apply(*v);
                }
            }
        }
        out.specs[j].kind = CovariateKind::Standardized;
        out.specs[j].stats = Some(stats);
        Ok(out)
    }

    /// Copy restricted to the named covariates, in the given order.
    pub fn select(&self, names: &[&str]) -> Result<CovariatePanel> {
        let idx = names
            .iter()
            .map(|n| self.index_of(n))
            .collect::<Result<Vec<_>>>()?;
        let specs: Vec<CovariateSpec> = idx.iter().map(|&j| self.specs[j].clone()).collect();
        let mut out = CovariatePanel::new(self.start, self.n_days, self.locations.clone(), specs)?;
        let (w_in, w_out) = (self.specs.len(), idx.len());
        for (l, row) in self.values.iter().enumerate() {
            for d in 0..self.n_days {
                for (k, &j) in idx.iter().enumerate() {
                    out.values[l][d * w_out + k] = row[d * w_in + j];
                }
            }
        }
        Ok(out)
    }
}

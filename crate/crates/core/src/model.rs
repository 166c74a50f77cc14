//! Identifiers and the full parameter state shared by simulation and inference.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::distributions::DelayDistribution;
use crate::effects::EffectSet;
use crate::error::{Error, Result};

/// Number of seeded days preceding the first modelled day of a compartment.
pub const SEED_DAYS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgeGroup {
    #[serde(rename = "0-4")]
    A00To04,
    #[serde(rename = "5-14")]
    A05To14,
    #[serde(rename = "15-34")]
    A15To34,
    #[serde(rename = "35-59")]
    A35To59,
    #[serde(rename = "60-79")]
    A60To79,
    #[serde(rename = "80+")]
    A80Plus,
}

impl AgeGroup {
    pub const ALL: [AgeGroup; 6] = [
        AgeGroup::A00To04,
        AgeGroup::A05To14,
        AgeGroup::A15To34,
        AgeGroup::A35To59,
        AgeGroup::A60To79,
        AgeGroup::A80Plus,
    ];

    /// The four brackets of the main analysis.
    pub const ADULT: [AgeGroup; 4] = [
        AgeGroup::A15To34,
        AgeGroup::A35To59,
        AgeGroup::A60To79,
        AgeGroup::A80Plus,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AgeGroup::A00To04 => "0-4",
            AgeGroup::A05To14 => "5-14",
            AgeGroup::A15To34 => "15-34",
            AgeGroup::A35To59 => "35-59",
            AgeGroup::A60To79 => "60-79",
            AgeGroup::A80Plus => "80+",
        }
    }
}

impl fmt::Display for AgeGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for AgeGroup {
    type Err = Error;

    /// Accepts `15-34` style labels and the `A15-A34` surveillance style.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let group = match s {
            "0-4" | "A00-A04" => AgeGroup::A00To04,
            "5-14" | "A05-A14" => AgeGroup::A05To14,
            "15-34" | "A15-A34" => AgeGroup::A15To34,
            "35-59" | "A35-A59" => AgeGroup::A35To59,
            "60-79" | "A60-A79" => AgeGroup::A60To79,
            "80+" | "A80+" => AgeGroup::A80Plus,
            _ => return Err(Error::UnknownAgeGroup(s.to_string())),
        };
        Ok(group)
    }
}

/// A (location, age group) cell with its own infection process.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CompartmentKey {
    pub location: String,
    pub age: AgeGroup,
}

impl CompartmentKey {
    pub fn new(location: impl Into<String>, age: AgeGroup) -> Self {
        Self {
            location: location.into(),
            age,
        }
    }
}

impl fmt::Display for CompartmentKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}", self.location, self.age)
    }
}

/// Population sizes per compartment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Populations(BTreeMap<CompartmentKey, f64>);

impl Populations {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: CompartmentKey, population: f64) -> Result<()> {
        if !(population > 0.0 && population.is_finite()) {
            return Err(Error::invalid(
                format!("population[{key}]"),
                format!("must be positive, got {population}"),
            ));
        }
        self.0.insert(key, population);
        Ok(())
    }

    pub fn get(&self, key: &CompartmentKey) -> Option<f64> {
        self.0.get(key).copied()
    }

    /// Total over all age groups of a location.
    pub fn location_total(&self, location: &str) -> Result<f64> {
        let total: f64 = self
            .0
            .iter()
            .filter(|(k, _)| k.location == location)
            .map(|(_, p)| *p)
            .sum();
        if total > 0.0 {
            Ok(total)
        } else {
            Err(Error::MissingPopulation(location.to_string()))
        }
    }

    /// Normalized population weights of `ages` within `location`.
    pub fn age_weights(&self, location: &str, ages: &[AgeGroup]) -> Result<Vec<f64>> {
        let pops = ages
            .iter()
            .map(|a| {
                self.get(&CompartmentKey::new(location, *a))
                    .ok_or_else(|| Error::MissingPopulation(format!("{location}|{a}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let total: f64 = pops.iter().sum();
        Ok(pops.into_iter().map(|p| p / total).collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CompartmentKey, f64)> {
        self.0.iter().map(|(k, v)| (k, *v))
    }

    pub fn locations(&self) -> Vec<String> {
        let mut locs: Vec<String> = self.0.keys().map(|k| k.location.clone()).collect();
        locs.dedup();
        locs
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Latent daily infections of one compartment. `start` is the day offset
/// (relative to panel day 0) of `infections[0]`; the first [`SEED_DAYS`]
/// entries are the seeded initial infections.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentInfections {
    pub start: i64,
    pub infections: Vec<u64>,
}

impl LatentInfections {
    /// Infections on day `day`; zero outside the stored range.
    #[inline]
    pub fn on(&self, day: i64) -> u64 {
        let idx = day - self.start;
        if idx < 0 || idx as usize >= self.infections.len() {
            0
        } else {
            self.infections[idx as usize]
        }
    }

    pub fn seeds(&self) -> &[u64] {
        &self.infections[..SEED_DAYS.min(self.infections.len())]
    }
}

/// Full parameter state of the renewal model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub effects: EffectSet,
    pub dispersion: BTreeMap<AgeGroup, f64>,
    pub reporting_rate: f64,
    pub generation: DelayDistribution,
    pub incubation: DelayDistribution,
    /// Expected total infections over the seeded days.
    pub init_mean: f64,
    /// Latent infections; used as explicit seeds by simulation and as the
    /// latent state by inference. May be empty.
    pub latent: BTreeMap<CompartmentKey, LatentInfections>,
}

impl ModelParams {
    pub fn compartments(&self) -> Vec<CompartmentKey> {
        self.effects.r0.keys().cloned().collect()
    }

    pub fn dispersion_for(&self, age: AgeGroup) -> Result<f64> {
        self.dispersion
            .get(&age)
            .copied()
            .ok_or_else(|| Error::invalid(format!("psi[{age}]"), "missing"))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.reporting_rate > 0.0 && self.reporting_rate <= 1.0) {
            return Err(Error::invalid(
                "reporting_rate",
                format!("must lie in (0, 1], got {}", self.reporting_rate),
            ));
        }
        if !(self.init_mean > 0.0) {
            return Err(Error::invalid("init_mean", "must be positive"));
        }
        for (age, psi) in &self.dispersion {
            if !(*psi > 0.0) {
                return Err(Error::invalid(format!("psi[{age}]"), "must be positive"));
            }
        }
        for key in self.effects.r0.keys() {
            self.dispersion_for(key.age)?;
        }
        self.effects.check_shape()
    }
}

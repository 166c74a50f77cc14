//! Line-list ingestion, case panels and covariate construction.

pub mod io;

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::effects::{names, Climatology, CovariateKind, CovariatePanel, CovariateSpec, DAYS_PER_YEAR};
use crate::error::{Error, Result};
use crate::model::{AgeGroup, CompartmentKey, Populations};

pub use io::{load_calendar, load_cases, load_covariates, load_interventions, load_populations, load_weather};

/// Days over which reported cases feed the information covariate.
pub const INFORMATION_WINDOW: usize = 7;
/// Delay after which cumulative incidence is assumed to matter.
pub const CUMULATIVE_LAG: usize = 14;
/// Infectious period relative to onset, inclusive.
pub const INFECTIOUS_FROM: i64 = -1;
pub const INFECTIOUS_TO: i64 = 6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseRecord {
    /// `None` marks a case without symptom onset (asymptomatic).
    pub onset_date: Option<NaiveDate>,
    pub report_date: NaiveDate,
    pub age_group: AgeGroup,
    pub location: String,
    pub died: bool,
}

impl CaseRecord {
    pub fn is_asymptomatic(&self) -> bool {
        self.onset_date.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intervention {
    pub location: String,
    pub covariate: String,
    pub start: NaiveDate,
    /// Inclusive; `None` means still active.
    pub end: Option<NaiveDate>,
}

impl Intervention {
    pub fn active_on(&self, date: NaiveDate) -> bool {
        date >= self.start && self.end.is_none_or(|e| date <= e)
    }
}

/// Daily temperature (°C) and relative humidity (%) per location.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Weather(BTreeMap<String, BTreeMap<NaiveDate, (f64, f64)>>);

impl Weather {
    pub fn insert(&mut self, location: &str, date: NaiveDate, temperature: f64, humidity: f64) {
        self.0
            .entry(location.to_string())
            .or_default()
            .insert(date, (temperature, humidity));
    }

    pub fn get(&self, location: &str, date: NaiveDate) -> Option<(f64, f64)> {
        self.0.get(location)?.get(&date).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, NaiveDate, f64, f64)> {
        self.0
            .iter()
            .flat_map(|(l, m)| m.iter().map(move |(d, (t, h))| (l.as_str(), *d, *t, *h)))
    }

    /// Mean over locations and years per day of year. 29 February is folded
    /// into 28 February; days without any observation are NaN.
    pub fn climatology(&self) -> Climatology {
        let mut sums = vec![(0.0, 0.0, 0usize); DAYS_PER_YEAR];
        for (_, date, t, h) in self.iter() {
            let d = day_of_year(date);
            sums[d].0 += t;
            sums[d].1 += h;
            sums[d].2 += 1;
        }
        let mean = |s: f64, n: usize| if n == 0 { f64::NAN } else { s / n as f64 };
        Climatology {
            temperature: sums.iter().map(|s| mean(s.0, s.2)).collect(),
            humidity: sums.iter().map(|s| mean(s.1, s.2)).collect(),
        }
    }
}

/// Zero-based day of year on a 365-day calendar.
pub fn day_of_year(date: NaiveDate) -> usize {
    let d = date.ordinal0() as usize;
    if date.leap_year() && d >= 59 {
        d - 1
    } else {
        d
    }
}

/// Observed symptomatic cases per compartment and day, plus everything the
/// fit needs alongside them.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub start: NaiveDate,
    pub n_days: usize,
    pub keys: Vec<CompartmentKey>,
    /// `cases[k][day]` for `keys[k]`.
    pub cases: Vec<Vec<u64>>,
    pub populations: Populations,
    pub covariates: CovariatePanel,
}

impl Panel {
    /// Aggregates onset-dated records into counts over `[start, start + n_days)`.
    /// Compartments are the population keys unless `keys` is given.
    pub fn from_records(
        records: &[CaseRecord],
        populations: Populations,
        covariates: CovariatePanel,
        start: NaiveDate,
        n_days: usize,
        keys: Option<Vec<CompartmentKey>>,
    ) -> Result<Panel> {
        let keys = match keys {
            Some(k) => k,
            None => populations.iter().map(|(k, _)| k.clone()).collect(),
        };
        let cases = aggregate_onsets(records, &keys, start, n_days);
        let panel = Panel {
            start,
            n_days,
            keys,
            cases,
            populations,
            covariates,
        };
        panel.validate()?;
        Ok(panel)
    }

    pub fn date(&self, day: usize) -> NaiveDate {
        self.start + Duration::days(day as i64)
    }

    pub fn locations(&self) -> Vec<&str> {
        let set: BTreeSet<&str> = self.keys.iter().map(|k| k.location.as_str()).collect();
        set.into_iter().collect()
    }

    pub fn index_of(&self, key: &CompartmentKey) -> Option<usize> {
        self.keys.iter().position(|k| k == key)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cases.len() != self.keys.len() || self.cases.iter().any(|c| c.len() != self.n_days) {
            return Err(Error::DimensionMismatch(format!(
                "case matrix does not match {} compartments x {} days",
                self.keys.len(),
                self.n_days
            )));
        }
        let unique: BTreeSet<&CompartmentKey> = self.keys.iter().collect();
        if unique.len() != self.keys.len() {
            return Err(Error::Config("duplicate compartment in panel".into()));
        }
        for k in &self.keys {
            if self.populations.get(k).is_none() {
                return Err(Error::MissingPopulation(k.to_string()));
            }
        }
        if self.covariates.n_covariates() > 0 {
            if self.covariates.start() != self.start {
                return Err(Error::DimensionMismatch(format!(
                    "covariates start {} but cases start {}",
                    self.covariates.start(),
                    self.start
                )));
            }
            self.covariates.check_complete(&self.locations(), self.n_days)?;
        }
        Ok(())
    }

    /// Restricts the panel to `keys` (kept in the given order).
    pub fn select(&self, keys: &[CompartmentKey]) -> Result<Panel> {
        let cases = keys
            .iter()
            .map(|k| {
                self.index_of(k)
                    .map(|i| self.cases[i].clone())
                    .ok_or_else(|| Error::Config(format!("compartment {k} not in panel")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Panel {
            keys: keys.to_vec(),
            cases,
            ..self.clone()
        })
    }
}

/// Counts of onset-dated records per compartment and onset day.
pub fn aggregate_onsets(records: &[CaseRecord], keys: &[CompartmentKey], start: NaiveDate, n_days: usize) -> Vec<Vec<u64>> {
    let index: BTreeMap<&CompartmentKey, usize> = keys.iter().enumerate().map(|(i, k)| (k, i)).collect();
    let mut out = vec![vec![0u64; n_days]; keys.len()];
    for r in records {
        let Some(onset) = r.onset_date else { continue };
        let day = (onset - start).num_days();
        if day < 0 || day as usize >= n_days {
            continue;
        }
        let key = CompartmentKey::new(r.location.clone(), r.age_group);
        if let Some(&i) = index.get(&key) {
            out[i][day as usize] += 1;
        }
    }
    out
}

/// Location-level counts by report date over `[start, start + n_days)`.
pub fn report_counts(records: &[CaseRecord], location: &str, start: NaiveDate, n_days: usize) -> Vec<u64> {
    let mut out = vec![0u64; n_days];
    for r in records.iter().filter(|r| r.location == location) {
        let day = (r.report_date - start).num_days();
        if day >= 0 && (day as usize) < n_days {
            out[day as usize] += 1;
        }
    }
    out
}

/// `log10(1 + weekly reported cases per 100 000)` over the seven days
/// ending the day before `day`. Days before the series start count as 0.
pub fn incidence_information(report_counts: &[u64], population: f64, day: usize) -> Result<f64> {
    if !(population > 0.0) {
        return Err(Error::invalid("population", "must be positive"));
    }
    let from = day.saturating_sub(INFORMATION_WINDOW);
    let weekly: u64 = report_counts[from.min(report_counts.len())..day.min(report_counts.len())]
        .iter()
        .sum();
    Ok((1.0 + weekly as f64 / population * 1e5).log10())
}

/// Percent of the population reported up to `lag` days before `day`.
pub fn cumulative_incidence(counts: &[u64], population: f64, day: usize, lag: usize) -> Result<f64> {
    if !(population > 0.0) {
        return Err(Error::invalid("population", "must be positive"));
    }
    if day < lag {
        return Ok(0.0);
    }
    let upto = (day - lag + 1).min(counts.len());
    Ok(100.0 * counts[..upto].iter().sum::<u64>() as f64 / population)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TracedRatio {
    pub value: f64,
    pub infectious: u64,
    pub reported: u64,
    /// No infectious cases on the day; `value` is 0.
    pub sparse: bool,
}

impl TracedRatio {
    fn new(infectious: u64, reported: u64) -> Self {
        Self {
            value: if infectious == 0 { 0.0 } else { reported as f64 / infectious as f64 },
            infectious,
            reported,
            sparse: infectious == 0,
        }
    }
}

/// Among onset-dated cases of `location` infectious on `date`, the fraction
/// already reported by `date`.
pub fn traced_ratio(records: &[CaseRecord], location: &str, date: NaiveDate) -> TracedRatio {
    let (mut infectious, mut reported) = (0, 0);
    for r in records.iter().filter(|r| r.location == location) {
        let Some(onset) = r.onset_date else { continue };
        let rel = (date - onset).num_days();
        if (INFECTIOUS_FROM..=INFECTIOUS_TO).contains(&rel) {
            infectious += 1;
            if r.report_date <= date {
                reported += 1;
            }
        }
    }
    TracedRatio::new(infectious, reported)
}

/// [`traced_ratio`] for every day of a window, in one pass over the records.
pub fn traced_ratio_series(records: &[CaseRecord], location: &str, start: NaiveDate, n_days: usize) -> Vec<TracedRatio> {
    let mut inf = vec![0i64; n_days + 1];
    let mut rep = vec![0i64; n_days + 1];
    let clamp = |d: i64| d.clamp(0, n_days as i64) as usize;
    for r in records.iter().filter(|r| r.location == location) {
        let Some(onset) = r.onset_date else { continue };
        let o = (onset - start).num_days();
        let (a, b) = (clamp(o + INFECTIOUS_FROM), clamp(o + INFECTIOUS_TO + 1));
        if a < b {
            inf[a] += 1;
            inf[b] -= 1;
        }
        let from = clamp((o + INFECTIOUS_FROM).max((r.report_date - start).num_days()));
        if from < b {
            rep[from] += 1;
            rep[b] -= 1;
        }
    }
    let (mut i, mut p) = (0i64, 0i64);
    (0..n_days)
        .map(|d| {
            i += inf[d];
            p += rep[d];
            TracedRatio::new(i as u64, p as u64)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthRate {
    /// Index of the later week.
    pub week: usize,
    pub previous: u64,
    pub current: u64,
    /// `None` when the previous week had no cases.
    pub rate: Option<f64>,
}

/// Ratios of consecutive non-overlapping window sums, starting at day 0.
pub fn weekly_growth_rates(counts: &[u64], window: usize) -> Result<Vec<GrowthRate>> {
    if window == 0 {
        return Err(Error::invalid("window", "must be positive"));
    }
    let sums: Vec<u64> = counts.chunks_exact(window).map(|c| c.iter().sum()).collect();
    if sums.len() < 2 {
        return Err(Error::invalid("counts", format!("need at least two full windows of {window} days")));
    }
    Ok(sums
        .windows(2)
        .enumerate()
        .map(|(w, p)| GrowthRate {
            week: w + 1,
            previous: p[0],
            current: p[1],
            rate: (p[0] > 0).then(|| p[1] as f64 / p[0] as f64),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CfrRow {
    pub age_group: AgeGroup,
    /// `YYYY-MM` of symptom onset.
    pub month: String,
    pub cases: u64,
    pub deaths: u64,
    pub cfr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptomaticRow {
    pub age_group: AgeGroup,
    /// `YYYY-MM` of reporting.
    pub month: String,
    pub total: u64,
    pub asymptomatic: u64,
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub cfr_by_month: Vec<CfrRow>,
    /// Whole-period CFR per age group (month `all`).
    pub cfr_overall: Vec<CfrRow>,
    pub asymptomatic: Vec<AsymptomaticRow>,
}

fn month(date: NaiveDate) -> String {
    format!("{:04}-{:02}", date.year(), date.month())
}

pub fn diagnostics(records: &[CaseRecord]) -> Diagnostics {
    let mut cfr: BTreeMap<(AgeGroup, String), (u64, u64)> = BTreeMap::new();
    let mut overall: BTreeMap<AgeGroup, (u64, u64)> = BTreeMap::new();
    let mut asym: BTreeMap<(AgeGroup, String), (u64, u64)> = BTreeMap::new();
    for r in records {
        let e = asym.entry((r.age_group, month(r.report_date))).or_default();
        e.0 += 1;
        if let Some(onset) = r.onset_date {
            let c = cfr.entry((r.age_group, month(onset))).or_default();
            let o = overall.entry(r.age_group).or_default();
            c.0 += 1;
            o.0 += 1;
            if r.died {
                c.1 += 1;
                o.1 += 1;
            }
        } else {
            e.1 += 1;
        }
    }
    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    Diagnostics {
        cfr_by_month: cfr
            .into_iter()
            .map(|((age_group, month), (cases, deaths))| CfrRow {
                age_group,
                month,
                cases,
                deaths,
                cfr: ratio(deaths, cases),
            })
            .collect(),
        cfr_overall: overall
            .into_iter()
            .map(|(age_group, (cases, deaths))| CfrRow {
                age_group,
                month: "all".into(),
                cases,
                deaths,
                cfr: ratio(deaths, cases),
            })
            .collect(),
        asymptomatic: asym
            .into_iter()
            .map(|((age_group, month), (total, asymptomatic))| AsymptomaticRow {
                age_group,
                month,
                total,
                asymptomatic,
                ratio: ratio(asymptomatic, total),
            })
            .collect(),
    }
}

/// Which covariates to build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateOptions {
    pub information: bool,
    pub cumulative_incidence: bool,
    pub traced_ratio: bool,
    pub weather: bool,
    pub holiday: bool,
    pub weekdays: bool,
}

impl Default for CovariateOptions {
    fn default() -> Self {
        Self {
            information: true,
            cumulative_incidence: true,
            traced_ratio: true,
            weather: true,
            holiday: true,
            weekdays: true,
        }
    }
}

/// Inputs of [`build_covariates`]; optional tables may be absent when the
/// corresponding covariates are switched off.
pub struct CovariateInputs<'a> {
    pub records: &'a [CaseRecord],
    pub populations: &'a Populations,
    pub weather: Option<&'a Weather>,
    pub interventions: &'a [Intervention],
    pub calendar: Option<&'a BTreeMap<(String, NaiveDate), bool>>,
}

/// Builds the location-level covariate panel over `[start, start + n_days)`.
///
/// Order: intervention dummies (sorted by name), information, cumulative
/// incidence, traced ratio, temperature, humidity, holiday, weekday dummies.
/// Information, temperature and humidity are standardized over the panel.
/// Report-date series for the case-derived covariates start at the earliest
/// report in the line list so that pre-window cases count.
pub fn build_covariates(
    inputs: &CovariateInputs<'_>,
    locations: &[String],
    start: NaiveDate,
    n_days: usize,
    options: &CovariateOptions,
) -> Result<CovariatePanel> {
    let interventions: BTreeSet<&str> = inputs.interventions.iter().map(|i| i.covariate.as_str()).collect();
    let mut specs: Vec<CovariateSpec> = interventions
        .iter()
        .map(|n| CovariateSpec::new(*n, CovariateKind::Dummy))
        .collect();
    let mut push = |on: bool, name: &str, kind| {
        if on {
            specs.push(CovariateSpec::new(name, kind));
        }
    };
    push(options.information, names::INCIDENCE_INFO, CovariateKind::Real);
    push(options.cumulative_incidence, names::CUMULATIVE_INCIDENCE, CovariateKind::Real);
    push(options.traced_ratio, names::TRACED_RATIO, CovariateKind::Real);
    push(options.weather, names::TEMPERATURE, CovariateKind::Real);
    push(options.weather, names::HUMIDITY, CovariateKind::Real);
    push(options.holiday, names::HOLIDAY, CovariateKind::Dummy);
    for w in names::WEEKDAYS {
        push(options.weekdays, w, CovariateKind::Dummy);
    }
    let mut panel = CovariatePanel::new(start, n_days, locations.to_vec(), specs)?;

    let series_start = inputs
        .records
        .iter()
        .map(|r| r.report_date)
        .min()
        .map_or(start, |d| d.min(start));
    let offset = (start - series_start).num_days() as usize;
    let span = offset + n_days;

    for loc in locations {
        let pop = inputs.populations.location_total(loc)?;
        let reports = report_counts(inputs.records, loc, series_start, span);
        let traced = options
            .traced_ratio
            .then(|| traced_ratio_series(inputs.records, loc, start, n_days));
        for day in 0..n_days {
            let date = panel.date(day);
            let mut j = 0;
            for name in &interventions {
                let active = inputs
                    .interventions
                    .iter()
                    .any(|i| i.covariate == *name && i.location == *loc && i.active_on(date));
                panel.set(loc, day, j, active as u8 as f64)?;
                j += 1;
            }
            if options.information {
                panel.set(loc, day, j, incidence_information(&reports, pop, offset + day)?)?;
                j += 1;
            }
            if options.cumulative_incidence {
                panel.set(loc, day, j, cumulative_incidence(&reports, pop, offset + day, CUMULATIVE_LAG)?)?;
                j += 1;
            }
            if let Some(t) = &traced {
                panel.set(loc, day, j, t[day].value)?;
                j += 1;
            }
            if options.weather {
                let w = inputs.weather.ok_or_else(|| Error::Config("weather covariates need a weather table".into()))?;
                let (t, h) = w.get(loc, date).unwrap_or((f64::NAN, f64::NAN));
                panel.set(loc, day, j, t)?;
                panel.set(loc, day, j + 1, h)?;
                j += 2;
            }
            if options.holiday {
                let c = inputs.calendar.ok_or_else(|| Error::Config("holiday covariate needs a calendar table".into()))?;
                let v = c.get(&(loc.clone(), date)).copied().unwrap_or(false);
                panel.set(loc, day, j, v as u8 as f64)?;
                j += 1;
            }
            if options.weekdays {
                let wd = date.weekday();
                for (k, d) in [Weekday::Tue, Weekday::Wed, Weekday::Thu, Weekday::Fri, Weekday::Sat, Weekday::Sun]
                    .iter()
                    .enumerate()
                {
                    panel.set(loc, day, j + k, (wd == *d) as u8 as f64)?;
                }
            }
        }
    }
    let refs: Vec<&str> = locations.iter().map(String::as_str).collect();
    panel.check_complete(&refs, n_days)?;
    if options.information {
        panel = panel.standardize(names::INCIDENCE_INFO)?;
    }
    if options.weather {
        panel = panel.standardize(names::TEMPERATURE)?;
        panel = panel.standardize(names::HUMIDITY)?;
    }
    Ok(panel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn rec(onset: Option<&str>, report: &str, loc: &str) -> CaseRecord {
        CaseRecord {
            onset_date: onset.map(d),
            report_date: d(report),
            age_group: AgeGroup::A15To34,
            location: loc.into(),
            died: false,
        }
    }

    #[test]
    fn information_examples() {
        assert_eq!(incidence_information(&[0; 10], 1e5, 8).unwrap(), 0.0);
        let mut c = vec![0u64; 10];
        c[2] = 99;
        assert!((incidence_information(&c, 1e5, 8).unwrap() - 2.0).abs() < 1e-12);
        // effective the following day: the 7-day window ends at day - 1
        assert_eq!(incidence_information(&c, 1e5, 2).unwrap(), 0.0);
        assert_eq!(incidence_information(&c, 1e5, 10).unwrap(), 0.0);
        c[7] = 61;
        assert!((incidence_information(&c, 1e5, 9).unwrap() - 161f64.log10()).abs() < 1e-12);
        assert!((161f64.log10() - 2.207).abs() < 1e-3);
    }

    #[test]
    fn cumulative_examples() {
        assert_eq!(cumulative_incidence(&[0; 40], 1e5, 30, 14).unwrap(), 0.0);
        let mut c = vec![0u64; 40];
        c[3] = 1000;
        c[10] = 200;
        c[20] = 5000;
        assert!((cumulative_incidence(&c, 1e5, 24, 14).unwrap() - 1.2).abs() < 1e-12);
        assert_eq!(cumulative_incidence(&c, 1e5, 13, 14).unwrap(), 0.0);
        assert!((cumulative_incidence(&c, 1e5, 17, 14).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn traced_examples() {
        let all_early = vec![
            rec(Some("2020-03-10"), "2020-03-10", "A"),
            rec(Some("2020-03-11"), "2020-03-11", "A"),
        ];
        let t = traced_ratio(&all_early, "A", d("2020-03-12"));
        assert_eq!(t.value, 1.0);
        let t = traced_ratio(&all_early, "A", d("2020-04-12"));
        assert_eq!(t.value, 0.0);
        assert!(t.sparse);

        let fixture = vec![
            rec(Some("2020-03-10"), "2020-03-11", "A"),
            rec(Some("2020-03-09"), "2020-03-14", "A"),
            rec(Some("2020-03-13"), "2020-03-13", "A"),
            rec(Some("2020-03-06"), "2020-03-15", "A"),
            rec(Some("2020-03-01"), "2020-03-02", "A"), // no longer infectious
            rec(None, "2020-03-10", "A"),
            rec(Some("2020-03-10"), "2020-03-10", "B"),
        ];
        let t = traced_ratio(&fixture, "A", d("2020-03-12"));
        assert_eq!((t.infectious, t.reported), (4, 1));
        assert_eq!(t.value, 0.25);
    }

    #[test]
    fn traced_series_matches_pointwise() {
        let mut recs = Vec::new();
        for i in 0..60u32 {
            let onset = d("2020-03-01") + Duration::days((i * 7 % 23) as i64);
            let report = onset + Duration::days((i % 9) as i64);
            recs.push(CaseRecord {
                onset_date: Some(onset),
                report_date: report,
                age_group: AgeGroup::A35To59,
                location: "A".into(),
                died: false,
            });
        }
        let s = traced_ratio_series(&recs, "A", d("2020-02-25"), 40);
        for (day, t) in s.iter().enumerate() {
            assert_eq!(*t, traced_ratio(&recs, "A", d("2020-02-25") + Duration::days(day as i64)));
        }
    }

    #[test]
    fn growth_examples() {
        let g = weekly_growth_rates(&[10; 21], 7).unwrap();
        assert!(g.iter().all(|r| r.rate == Some(1.0)));
        let mut c = vec![0u64; 14];
        c[0] = 100;
        c[9] = 250;
        assert_eq!(weekly_growth_rates(&c, 7).unwrap()[0].rate, Some(2.5));
        let doubling: Vec<u64> = (0..5).flat_map(|w| std::iter::repeat_n(1u64 << w, 7)).collect();
        let g = weekly_growth_rates(&doubling, 7).unwrap();
        assert_eq!(g.len(), 4);
        assert!(g.iter().all(|r| r.rate == Some(2.0)));
        let g = weekly_growth_rates(&[0, 0, 5, 5], 2).unwrap();
        assert_eq!(g[0].rate, None);
        assert!(weekly_growth_rates(&[1; 10], 7).is_err());
    }

    #[test]
    fn diagnostics_counts() {
        let mut recs: Vec<CaseRecord> = (0..50).map(|_| rec(Some("2020-04-01"), "2020-04-03", "A")).collect();
        recs[0].died = true;
        recs[1].died = true;
        recs.push(rec(None, "2020-04-03", "A"));
        let dg = diagnostics(&recs);
        assert_eq!(dg.cfr_by_month.len(), 1);
        assert_eq!(dg.cfr_by_month[0].cfr, Some(0.04));
        assert_eq!(dg.asymptomatic[0].asymptomatic, 1);
        assert_eq!(dg.asymptomatic[0].total, 51);

        let none = diagnostics(&recs[2..20]);
        assert_eq!(none.cfr_overall[0].cfr, Some(0.0));
    }

    #[test]
    fn covariate_builder() {
        let start = d("2020-03-02"); // Monday
        let mut pops = Populations::new();
        pops.insert(CompartmentKey::new("A", AgeGroup::A15To34), 5e4).unwrap();
        pops.insert(CompartmentKey::new("A", AgeGroup::A35To59), 5e4).unwrap();
        let mut weather = Weather::default();
        for i in 0..10 {
            weather.insert("A", start + Duration::days(i), 5.0 + i as f64, 70.0 - i as f64);
        }
        let records: Vec<CaseRecord> = (0..30)
            .map(|i| rec(Some("2020-02-20"), &format!("2020-03-0{}", 1 + i % 9), "A"))
            .collect();
        let interventions = vec![Intervention {
            location: "A".into(),
            covariate: "school_closure".into(),
            start: d("2020-03-05"),
            end: None,
        }];
        let calendar = BTreeMap::from([(("A".to_string(), d("2020-03-08")), true)]);
        let inputs = CovariateInputs {
            records: &records,
            populations: &pops,
            weather: Some(&weather),
            interventions: &interventions,
            calendar: Some(&calendar),
        };
        let p = build_covariates(&inputs, &["A".into()], start, 10, &CovariateOptions::default()).unwrap();
        let j = |n: &str| p.index_of(n).unwrap();
        assert_eq!(p.names()[0], "school_closure");
        assert_eq!(p.get("A", 2, 0), Some(0.0));
        assert_eq!(p.get("A", 3, 0), Some(1.0));
        assert_eq!(p.get("A", 6, j(names::HOLIDAY)), Some(1.0));
        assert_eq!(p.get("A", 0, j("tuesday")), Some(0.0));
        assert_eq!(p.get("A", 1, j("tuesday")), Some(1.0));
        assert_eq!(p.get("A", 6, j("sunday")), Some(1.0));
        assert_eq!(p.specs()[j(names::TEMPERATURE)].kind, CovariateKind::Standardized);
        assert_eq!(p.specs()[j(names::TRACED_RATIO)].kind, CovariateKind::Real);

        let mut sparse = weather.clone();
        sparse.0.get_mut("A").unwrap().remove(&d("2020-03-06"));
        let inputs = CovariateInputs {
            weather: Some(&sparse),
            ..inputs
        };
        match build_covariates(&inputs, &["A".into()], start, 10, &CovariateOptions::default()) {
            Err(Error::MissingCovariate { day, covariate, .. }) => {
                assert_eq!(day, "2020-03-06");
                assert_eq!(covariate, names::TEMPERATURE);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn day_of_year_folds_leap_day() {
        assert_eq!(day_of_year(d("2021-01-01")), 0);
        assert_eq!(day_of_year(d("2020-02-29")), 58);
        assert_eq!(day_of_year(d("2020-03-01")), 59);
        assert_eq!(day_of_year(d("2021-03-01")), 59);
        assert_eq!(day_of_year(d("2020-12-31")), 364);
    }

    proptest! {
        #[test]
        fn traced_ratio_bounded_and_monotone(
            cases in prop::collection::vec((0i64..20, 0i64..10), 1..40),
            day in 0i64..25,
            earlier in 0usize..40,
        ) {
            let base = d("2020-03-01");
            let mut recs: Vec<CaseRecord> = cases
                .iter()
                .map(|(o, delay)| CaseRecord {
                    onset_date: Some(base + Duration::days(*o)),
                    report_date: base + Duration::days(o + delay),
                    age_group: AgeGroup::A15To34,
                    location: "A".into(),
                    died: false,
                })
                .collect();
            let date = base + Duration::days(day);
            let before = traced_ratio(&recs, "A", date);
            prop_assert!((0.0..=1.0).contains(&before.value));
            let i = earlier % recs.len();
            recs[i].report_date = recs[i].onset_date.unwrap();
            let after = traced_ratio(&recs, "A", date);
            prop_assert!(after.value >= before.value);
        }

        #[test]
        fn information_monotone_and_scale_free(a in 0u64..5000, b in 0u64..5000, pop in 1e3f64..1e7, k in 1u64..20) {
            let (lo, hi) = (a.min(b), a.max(b));
            let f = |n: u64, p: f64| incidence_information(&[n, 0, 0, 0, 0, 0, 0], p, 7).unwrap();
            prop_assert!(f(lo, pop) <= f(hi, pop));
            if lo < hi {
                prop_assert!(f(lo, pop) < f(hi, pop));
            }
            prop_assert!((f(a * k, pop * k as f64) - f(a, pop)).abs() < 1e-12);
        }

        #[test]
        fn exponential_series_growth(i0 in 1u64..50, g in 2u64..4) {
            let counts: Vec<u64> = (0..4u32).flat_map(|w| {
                let level = i0 * g.pow(w);
                std::iter::repeat_n(level, 7)
            }).collect();
            for r in weekly_growth_rates(&counts, 7).unwrap() {
                prop_assert!((r.rate.unwrap() - g as f64).abs() < 1e-12);
            }
        }
    }
}

//! CSV readers and writers for line lists, populations, weather, intervention
//! and calendar tables, and covariate panels.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;

use super::{CaseRecord, Intervention, Weather};
use crate::effects::{CovariateKind, CovariatePanel, CovariateSpec, Standardization};
use crate::error::{Error, Result};
use crate::model::{AgeGroup, CompartmentKey, Populations};

pub const CASES_HEADER: [&str; 5] = ["onset_date", "report_date", "age_group", "location", "died"];
pub const POPULATION_HEADER: [&str; 3] = ["location", "age_group", "population"];
pub const WEATHER_HEADER: [&str; 4] = ["location", "date", "temp_avg_c", "rel_humidity_pct"];
pub const INTERVENTION_HEADER: [&str; 4] = ["location", "covariate", "start_date", "end_date"];
pub const CALENDAR_HEADER: [&str; 3] = ["location", "date", "holiday"];
pub const COVARIATE_META_HEADER: [&str; 4] = ["covariate", "kind", "center", "scale"];

pub(crate) fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Row-by-row reader that checks the header and attaches line numbers to errors.
pub(crate) struct Table<R: Read> {
    label: String,
    reader: csv::Reader<R>,
}

pub(crate) struct Row {
    pub(crate) line: u64,
    record: csv::StringRecord,
}

impl<R: Read> Table<R> {
    pub(crate) fn new(reader: R, label: &str, header: &[&str]) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let found = reader.headers().map_err(|e| parse_err(label, 1, e.to_string()))?.clone();
        if found.len() < header.len() || header.iter().zip(found.iter()).any(|(h, f)| h != &f) {
            return Err(parse_err(
                label,
                1,
                format!("expected header `{}`, found `{}`", header.join(","), found.iter().collect::<Vec<_>>().join(",")),
            ));
        }
        Ok(Self {
            label: label.to_string(),
            reader,
        })
    }

    pub(crate) fn rows(&mut self) -> impl Iterator<Item = Result<Row>> + '_ {
        let label = self.label.clone();
        self.reader.records().map(move |r| {
            let record = r.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                parse_err(&label, line, e.to_string())
            })?;
            let line = record.position().map_or(0, |p| p.line());
            Ok(Row { line, record })
        })
    }
}

pub(crate) fn parse_err(label: &str, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: label.to_string(),
        line,
        message: message.into(),
    }
}

impl Row {
    pub(crate) fn field<'a>(&'a self, label: &str, idx: usize, name: &str) -> Result<&'a str> {
        self.record
            .get(idx)
            .ok_or_else(|| parse_err(label, self.line, format!("missing field `{name}`")))
    }

    fn date(&self, label: &str, idx: usize, name: &str) -> Result<NaiveDate> {
        let s = self.field(label, idx, name)?;
        NaiveDate::parse_from_str(s, "%Y-%m-%d")
            .map_err(|e| parse_err(label, self.line, format!("bad {name} `{s}`: {e}")))
    }

    fn opt_date(&self, label: &str, idx: usize, name: &str) -> Result<Option<NaiveDate>> {
        if self.field(label, idx, name)?.is_empty() {
            Ok(None)
        } else {
            self.date(label, idx, name).map(Some)
        }
    }

    pub(crate) fn number(&self, label: &str, idx: usize, name: &str) -> Result<f64> {
        let s = self.field(label, idx, name)?;
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| parse_err(label, self.line, format!("bad {name} `{s}`")))
    }

    fn flag(&self, label: &str, idx: usize, name: &str) -> Result<bool> {
        match self.field(label, idx, name)? {
            "0" | "false" => Ok(false),
            "1" | "true" => Ok(true),
            s => Err(parse_err(label, self.line, format!("bad {name} `{s}` (expected 0/1)"))),
        }
    }

    fn age(&self, label: &str, idx: usize) -> Result<AgeGroup> {
        self.field(label, idx, "age_group")?.parse()
    }

    pub(crate) fn text(&self, label: &str, idx: usize, name: &str) -> Result<String> {
        let s = self.field(label, idx, name)?;
        if s.is_empty() {
            return Err(parse_err(label, self.line, format!("empty {name}")));
        }
        Ok(s.to_string())
    }
}

pub fn read_cases<R: Read>(reader: R, label: &str) -> Result<Vec<CaseRecord>> {
    let mut table = Table::new(reader, label, &CASES_HEADER)?;
    let mut out = Vec::new();
    for row in table.rows() {
        let row = row?;
        let onset_date = row.opt_date(label, 0, "onset_date")?;
        let report_date = row.date(label, 1, "report_date")?;
        let age_group = row.age(label, 2)?;
        let location = row.text(label, 3, "location")?;
        let died = row.flag(label, 4, "died")?;
        if let Some(onset) = onset_date {
            if onset > report_date {
                return Err(Error::Validation {
                    path: label.to_string(),
                    line: row.line,
                    message: format!("onset {onset} after report {report_date}"),
                });
            }
        }
        out.push(CaseRecord {
            onset_date,
            report_date,
            age_group,
            location,
            died,
        });
    }
    Ok(out)
}

pub fn load_cases(path: &Path) -> Result<Vec<CaseRecord>> {
    read_cases(open(path)?, &path.display().to_string())
}

pub fn write_cases<W: Write>(writer: W, records: &[CaseRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let res = (|| -> csv::Result<()> {
        w.write_record(CASES_HEADER)?;
        for r in records {
            w.write_record([
                r.onset_date.map(|d| d.to_string()).unwrap_or_default(),
                r.report_date.to_string(),
                r.age_group.label().to_string(),
                r.location.clone(),
                if r.died { "1" } else { "0" }.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(csv_write_err)
}

pub fn save_cases(path: &Path, records: &[CaseRecord]) -> Result<()> {
    write_cases(create(path)?, records)
}

pub(crate) fn csv_write_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: Default::default(),
            source,
        },
        other => Error::Config(format!("csv write failed: {other:?}")),
    }
}

pub fn read_populations<R: Read>(reader: R, label: &str) -> Result<Populations> {
    let mut table = Table::new(reader, label, &POPULATION_HEADER)?;
    let mut out = Populations::new();
    for row in table.rows() {
        let row = row?;
        let key = CompartmentKey::new(row.text(label, 0, "location")?, row.age(label, 1)?);
        if out.get(&key).is_some() {
            return Err(Error::Validation {
                path: label.to_string(),
                line: row.line,
                message: format!("duplicate population for {key}"),
            });
        }
        let pop = row.number(label, 2, "population")?;
        out.insert(key, pop).map_err(|e| Error::Validation {
            path: label.to_string(),
            line: row.line,
            message: e.to_string(),
        })?;
    }
    Ok(out)
}

pub fn load_populations(path: &Path) -> Result<Populations> {
    read_populations(open(path)?, &path.display().to_string())
}

pub fn write_populations<W: Write>(writer: W, pops: &Populations) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let res = (|| -> csv::Result<()> {
        w.write_record(POPULATION_HEADER)?;
        for (k, p) in pops.iter() {
            w.write_record([k.location.clone(), k.age.label().to_string(), p.to_string()])?;
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(csv_write_err)
}

pub fn save_populations(path: &Path, pops: &Populations) -> Result<()> {
    write_populations(create(path)?, pops)
}

pub fn read_weather<R: Read>(reader: R, label: &str) -> Result<Weather> {
    let mut table = Table::new(reader, label, &WEATHER_HEADER)?;
    let mut out = Weather::default();
    for row in table.rows() {
        let row = row?;
        let loc = row.text(label, 0, "location")?;
        let date = row.date(label, 1, "date")?;
        let temp = row.number(label, 2, "temp_avg_c")?;
        let hum = row.number(label, 3, "rel_humidity_pct")?;
        if !(0.0..=100.0).contains(&hum) {
            return Err(Error::Validation {
                path: label.to_string(),
                line: row.line,
                message: format!("relative humidity {hum} outside [0, 100]"),
            });
        }
        out.insert(&loc, date, temp, hum);
    }
    Ok(out)
}

pub fn load_weather(path: &Path) -> Result<Weather> {
    read_weather(open(path)?, &path.display().to_string())
}

pub fn write_weather<W: Write>(writer: W, weather: &Weather) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let res = (|| -> csv::Result<()> {
        w.write_record(WEATHER_HEADER)?;
        for (loc, date, temp, hum) in weather.iter() {
            w.write_record([loc.to_string(), date.to_string(), temp.to_string(), hum.to_string()])?;
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(csv_write_err)
}

pub fn save_weather(path: &Path, weather: &Weather) -> Result<()> {
    write_weather(create(path)?, weather)
}

pub fn read_interventions<R: Read>(reader: R, label: &str) -> Result<Vec<Intervention>> {
    let mut table = Table::new(reader, label, &INTERVENTION_HEADER)?;
    let mut out = Vec::new();
    for row in table.rows() {
        let row = row?;
        let start = row.date(label, 2, "start_date")?;
        let end = row.opt_date(label, 3, "end_date")?;
        if end.is_some_and(|e| e < start) {
            return Err(Error::Validation {
                path: label.to_string(),
                line: row.line,
                message: "end_date before start_date".into(),
            });
        }
        out.push(Intervention {
            location: row.text(label, 0, "location")?,
            covariate: row.text(label, 1, "covariate")?,
            start,
            end,
        });
    }
    Ok(out)
}

pub fn load_interventions(path: &Path) -> Result<Vec<Intervention>> {
    read_interventions(open(path)?, &path.display().to_string())
}

/// Holiday flags per (location, date).
pub fn read_calendar<R: Read>(reader: R, label: &str) -> Result<BTreeMap<(String, NaiveDate), bool>> {
    let mut table = Table::new(reader, label, &CALENDAR_HEADER)?;
    let mut out = BTreeMap::new();
    for row in table.rows() {
        let row = row?;
        out.insert(
            (row.text(label, 0, "location")?, row.date(label, 1, "date")?),
            row.flag(label, 2, "holiday")?,
        );
    }
    Ok(out)
}

pub fn load_calendar(path: &Path) -> Result<BTreeMap<(String, NaiveDate), bool>> {
    read_calendar(open(path)?, &path.display().to_string())
}

fn fmt_value(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

/// Wide covariate table `location,date,<covariates...>`; missing values are empty.
pub fn write_covariates<W: Write>(writer: W, panel: &CovariatePanel) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let res = (|| -> csv::Result<()> {
        let mut header = vec!["location".to_string(), "date".to_string()];
        header.extend(panel.names().iter().map(|s| s.to_string()));
        w.write_record(&header)?;
        for (l, loc) in panel.locations().iter().enumerate() {
            for d in 0..panel.n_days() {
                let mut rec = vec![loc.clone(), panel.date(d).to_string()];
                rec.extend(panel.row(l, d).iter().map(|v| fmt_value(*v)));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(csv_write_err)
}

/// Covariate metadata `covariate,kind,center,scale`.
pub fn write_covariate_meta<W: Write>(writer: W, specs: &[CovariateSpec]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let res = (|| -> csv::Result<()> {
        w.write_record(COVARIATE_META_HEADER)?;
        for s in specs {
            let (c, sc) = s.stats.map_or((String::new(), String::new()), |st| (st.mean.to_string(), st.sd.to_string()));
            w.write_record([s.name.clone(), s.kind.as_str().to_string(), c, sc])?;
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(csv_write_err)
}

pub fn read_covariate_meta<R: Read>(reader: R, label: &str) -> Result<Vec<CovariateSpec>> {
    let mut table = Table::new(reader, label, &COVARIATE_META_HEADER)?;
    let mut out = Vec::new();
    for row in table.rows() {
        let row = row?;
        let name = row.text(label, 0, "covariate")?;
        let kind = CovariateKind::parse(row.field(label, 1, "kind")?)
            .map_err(|e| parse_err(label, row.line, e.to_string()))?;
        let stats = if row.field(label, 2, "center")?.is_empty() {
            None
        } else {
            Some(Standardization {
                mean: row.number(label, 2, "center")?,
                sd: row.number(label, 3, "scale")?,
            })
        };
        out.push(CovariateSpec { name, kind, stats });
    }
    Ok(out)
}

/// Reads a wide covariate table. Column kinds come from `specs` when given
/// (matched by name), otherwise every covariate is read as real-valued.
pub fn read_covariates<R: Read>(reader: R, label: &str, specs: Option<&[CovariateSpec]>) -> Result<CovariatePanel> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = reader.headers().map_err(|e| parse_err(label, 1, e.to_string()))?.clone();
    if header.len() < 2 || &header[0] != "location" || &header[1] != "date" {
        return Err(parse_err(label, 1, "expected header starting with `location,date`"));
    }
    let names: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let specs: Vec<CovariateSpec> = match specs {
        Some(specs) => {
            let listed: Vec<&str> = specs.iter().map(|s| s.name.as_str()).collect();
            let cols: Vec<&str> = names.iter().map(String::as_str).collect();
            if listed != cols {
                return Err(Error::CovariateMismatch(crate::effects::describe_mismatch(&names, &listed)));
            }
            specs.to_vec()
        }
        None => names.iter().map(|n| CovariateSpec::new(n.clone(), CovariateKind::Real)).collect(),
    };

    let mut rows = Vec::new();
    for r in reader.records() {
        let record = r.map_err(|e| parse_err(label, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(parse_err(label, line, format!("expected {} fields, found {}", header.len(), record.len())));
        }
        let date = NaiveDate::parse_from_str(&record[1], "%Y-%m-%d")
            .map_err(|e| parse_err(label, line, format!("bad date `{}`: {e}", &record[1])))?;
        let values = record
            .iter()
            .skip(2)
            .map(|s| {
                if s.is_empty() {
                    Ok(f64::NAN)
                } else {
                    s.parse::<f64>().map_err(|_| parse_err(label, line, format!("bad value `{s}`")))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push((record[0].to_string(), date, values));
    }
    let Some(start) = rows.iter().map(|r| r.1).min() else {
        return CovariatePanel::new(NaiveDate::default(), 0, Vec::new(), specs);
    };
    let end = rows.iter().map(|r| r.1).max().unwrap_or(start);
    let n_days = (end - start).num_days() as usize + 1;
    let mut locations: Vec<String> = rows.iter().map(|r| r.0.clone()).collect();
    locations.sort();
    locations.dedup();
    let mut panel = CovariatePanel::new(start, n_days, locations, specs)?;
    for (loc, date, values) in rows {
        let day = (date - start).num_days() as usize;
        for (j, v) in values.into_iter().enumerate() {
            panel.set(&loc, day, j, v)?;
        }
    }
    panel.validate()?;
    Ok(panel)
}

pub fn save_covariates(path: &Path, meta_path: &Path, panel: &CovariatePanel) -> Result<()> {
    write_covariates(create(path)?, panel)?;
    write_covariate_meta(create(meta_path)?, panel.specs())
}

pub fn load_covariates(path: &Path, meta_path: Option<&Path>) -> Result<CovariatePanel> {
    let specs = match meta_path {
        Some(m) => Some(read_covariate_meta(open(m)?, &m.display().to_string())?),
        None => None,
    };
    read_covariates(open(path)?, &path.display().to_string(), specs.as_deref())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_case_file() {
        let recs = read_cases("onset_date,report_date,age_group,location,died\n".as_bytes(), "t").unwrap();
        assert!(recs.is_empty());
    }

    #[test]
    fn onset_after_report_rejected() {
        let csv = "onset_date,report_date,age_group,location,died\n2020-03-05,2020-03-04,15-34,A,0\n";
        match read_cases(csv.as_bytes(), "t") {
            Err(Error::Validation { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_row_reports_line() {
        let csv = "onset_date,report_date,age_group,location,died\n\
                   2020-03-01,2020-03-04,15-34,A,0\n\
                   2020-03-01,not-a-date,15-34,A,0\n";
        match read_cases(csv.as_bytes(), "t") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let csv = "onset_date,report_date,age_group,location,died\n2020-03-01,2020-03-04,90-99,A,0\n";
        assert!(matches!(read_cases(csv.as_bytes(), "t"), Err(Error::UnknownAgeGroup(_))));
    }

    #[test]
    fn ten_row_fixture() {
        let csv = "onset_date,report_date,age_group,location,died\n\
                   2020-03-01,2020-03-03,15-34,A,0\n\
                   ,2020-03-03,15-34,A,0\n\
                   2020-03-02,2020-03-04,35-59,A,1\n\
                   2020-03-02,2020-03-02,60-79,B,0\n\
                   ,2020-03-05,80+,B,0\n\
                   2020-03-04,2020-03-06,80+,B,1\n\
                   2020-03-04,2020-03-09,15-34,A,0\n\
                   ,2020-03-06,35-59,A,0\n\
                   2020-03-06,2020-03-07,A35-A59,A,0\n\
                   2020-03-07,2020-03-08,0-4,B,0\n";
        let recs = read_cases(csv.as_bytes(), "t").unwrap();
        assert_eq!(recs.len(), 10);
        assert_eq!(recs.iter().filter(|r| r.is_asymptomatic()).count(), 3);
        let mut buf = Vec::new();
        write_cases(&mut buf, &recs).unwrap();
        assert_eq!(read_cases(buf.as_slice(), "t").unwrap(), recs);
    }

    #[test]
    fn covariate_table_round_trip() {
        let start = NaiveDate::from_ymd_opt(2020, 3, 1).unwrap();
        let mut p = CovariatePanel::new(
            start,
            3,
            vec!["A".into(), "B".into()],
            vec![
                CovariateSpec::new("lockdown", CovariateKind::Dummy),
                CovariateSpec::new("temp", CovariateKind::Real),
            ],
        )
        .unwrap();
        for (l, loc) in ["A", "B"].iter().enumerate() {
            for d in 0..3 {
                p.set(loc, d, 0, (d > 0) as u8 as f64).unwrap();
                p.set(loc, d, 1, 4.25 + l as f64 * 0.1 + d as f64).unwrap();
            }
        }
        let p = p.standardize("temp").unwrap();
        let mut data = Vec::new();
        let mut meta = Vec::new();
        write_covariates(&mut data, &p).unwrap();
        write_covariate_meta(&mut meta, p.specs()).unwrap();
        let specs = read_covariate_meta(meta.as_slice(), "m").unwrap();
        let back = read_covariates(data.as_slice(), "c", Some(&specs)).unwrap();
        assert_eq!(back, p);
    }
}

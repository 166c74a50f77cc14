//! Draw, summary and parameter CSV files.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};

use super::sampler::{chain_rhats, PosteriorDraws};
use super::summary::ParameterSummary;
use crate::distributions::DelayDistribution;
use crate::effects::EffectSet;
use crate::error::{Error, Result};
use crate::features::io::{create, csv_write_err, open, parse_err, Table};
use crate::model::{AgeGroup, CompartmentKey, LatentInfections, ModelParams};

pub const DRAWS_HEADER: [&str; 3] = ["iteration", "parameter", "value"];
pub const SUMMARY_HEADER: [&str; 6] = ["parameter", "mean", "sd", "q2.5", "q97.5", "rhat"];
pub const PARAMS_HEADER: [&str; 2] = ["parameter", "value"];

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Long-format draws of one chain.
pub fn write_chain_draws<W: Write>(writer: W, draws: &PosteriorDraws, chain: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let res = (|| -> csv::Result<()> {
        w.write_record(DRAWS_HEADER)?;
        for (k, row) in draws.chains[chain].iter().enumerate() {
            let it = draws.iteration(k).to_string();
            for (name, v) in draws.names.iter().zip(row) {
                w.write_record([it.as_str(), name.as_str(), v.to_string().as_str()])?;
            }
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(csv_write_err)
}

pub fn draws_file_name(chain: usize) -> String {
    format!("draws_chain{}.csv", chain + 1)
}

/// Writes one draws file per chain into `dir`.
pub fn save_draws(dir: &Path, draws: &PosteriorDraws) -> Result<Vec<PathBuf>> {
    (0..draws.chains.len())
        .map(|c| {
            let path = dir.join(draws_file_name(c));
            write_chain_draws(create(&path)?, draws, c)?;
            Ok(path)
        })
        .collect()
}

/// Chain draws as `(iterations, names, rows)`.
pub struct ChainDraws {
    pub iterations: Vec<usize>,
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn read_chain_draws<R: Read>(reader: R, label: &str) -> Result<ChainDraws> {
    let mut table = Table::new(reader, label, &DRAWS_HEADER)?;
    let mut iterations: Vec<usize> = Vec::new();
    let mut names: Vec<String> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for row in table.rows() {
        let row = row?;
        let it_s = row.field(label, 0, "iteration")?;
        let it: usize = it_s
            .parse()
            .map_err(|_| parse_err(label, row.line, format!("bad iteration `{it_s}`")))?;
        let name = row.text(label, 1, "parameter")?;
        let v = row.number(label, 2, "value")?;
        if iterations.last() != Some(&it) {
            if iterations.last().is_some_and(|&last| it < last) {
                return Err(parse_err(label, row.line, "iterations must be increasing"));
            }
            if rows.len() > 1 && rows.last().map(Vec::len) != Some(names.len()) {
                return Err(parse_err(label, row.line, "incomplete draw before this line"));
            }
            iterations.push(it);
            rows.push(Vec::with_capacity(names.len()));
        }
        let first = rows.len() == 1;
        let draw = rows.last_mut().expect("pushed above");
        if first {
            names.push(name);
            draw.push(v);
        } else {
            let pos = draw.len();
            if names.get(pos) != Some(&name) {
                return Err(parse_err(
                    label,
                    row.line,
                    format!("parameter `{name}` out of order (expected `{}`)", names.get(pos).map_or("", String::as_str)),
                ));
            }
            draw.push(v);
        }
    }
    if rows.last().is_some_and(|r| r.len() != names.len()) {
        return Err(parse_err(label, 0, "last draw is incomplete"));
    }
    Ok(ChainDraws {
        iterations,
        names,
        rows,
    })
}

/// Reassembles posterior draws from per-chain files and recomputes Rhat.
pub fn load_draws(paths: &[PathBuf]) -> Result<PosteriorDraws> {
    if paths.is_empty() {
        return Err(Error::Config("no draw files given".into()));
    }
    let mut chains = Vec::with_capacity(paths.len());
    let mut names: Option<Vec<String>> = None;
    let mut iterations = Vec::new();
    for p in paths {
        let label = p.display().to_string();
        let c = read_chain_draws(open(p)?, &label)?;
        match &names {
            None => names = Some(c.names.clone()),
            Some(n) if *n != c.names => {
                return Err(Error::DimensionMismatch(format!("{label}: parameter set differs from the first chain")));
            }
            _ => {}
        }
        iterations = c.iterations;
        chains.push(c.rows);
    }
    let names = names.unwrap_or_default();
    let thin = match iterations.as_slice() {
        [a, b, ..] => b - a,
        _ => 1,
    };
    let n_keep = chains.iter().map(Vec::len).min().unwrap_or(0) * thin;
    let n_burn = iterations.first().map_or(0, |f| f.saturating_sub(thin));
    let monitored: Vec<bool> = names.iter().map(|n| !n.starts_with("latent[")).collect();
    let rhat = chain_rhats(&chains, &monitored);
    Ok(PosteriorDraws {
        names,
        monitored,
        chains,
        rhat,
        acceptance: BTreeMap::new(),
        n_burn,
        n_keep,
        thin,
        final_params: Vec::new(),
    })
}

pub fn write_summary<W: Write>(writer: W, rows: &[ParameterSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let res = (|| -> csv::Result<()> {
        w.write_record(SUMMARY_HEADER)?;
        for r in rows {
            w.write_record([
                r.parameter.clone(),
                r.mean.to_string(),
                r.sd.to_string(),
                r.q025.to_string(),
                r.q975.to_string(),
                fmt_opt(r.rhat),
            ])?;
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(csv_write_err)
}

pub fn save_summary(path: &Path, rows: &[ParameterSummary]) -> Result<()> {
    write_summary(create(path)?, rows)
}

pub fn read_summary<R: Read>(reader: R, label: &str) -> Result<Vec<ParameterSummary>> {
    let mut table = Table::new(reader, label, &SUMMARY_HEADER)?;
    let mut out = Vec::new();
    for row in table.rows() {
        let row = row?;
        let rhat = match row.field(label, 5, "rhat")? {
            "" => None,
            s => Some(
                s.parse::<f64>()
                    .map_err(|_| parse_err(label, row.line, format!("bad rhat `{s}`")))?,
            ),
        };
        out.push(ParameterSummary {
            parameter: row.text(label, 0, "parameter")?,
            mean: row.number(label, 1, "mean")?,
            sd: row.number(label, 2, "sd")?,
            q025: row.number(label, 3, "q2.5")?,
            q975: row.number(label, 4, "q97.5")?,
            rhat,
        });
    }
    Ok(out)
}

pub fn load_summary(path: &Path) -> Result<Vec<ParameterSummary>> {
    read_summary(open(path)?, &path.display().to_string())
}

/// Model parameters as `parameter,value` rows, named like the draws. Delay
/// distributions are stored as gamma mean and sd (`mu_gen`, `sd_gen`, ...);
/// error terms are keyed by date counted from `start`, latent infections
/// by day relative to panel day 0.
pub fn write_params<W: Write>(writer: W, params: &ModelParams, start: NaiveDate) -> Result<()> {
    let mut rows: Vec<(String, String)> = Vec::new();
    let e = &params.effects;
    for (k, v) in &e.r0 {
        rows.push((format!("r0[{k}]"), v.to_string()));
    }
    for (age, beta) in &e.beta {
        for (cov, v) in e.covariates.iter().zip(beta) {
            rows.push((format!("beta[{age}|{cov}]"), v.to_string()));
        }
    }
    for (age, v) in &params.dispersion {
        rows.push((format!("psi[{age}]"), v.to_string()));
    }
    for (name, v) in [
        ("mu_gen", params.generation.mean()),
        ("sd_gen", params.generation.sd()),
        ("mu_inc", params.incubation.mean()),
        ("sd_inc", params.incubation.sd()),
        ("mu_init", params.init_mean),
        ("reporting_rate", params.reporting_rate),
        ("noise_sd", e.noise_sd),
    ] {
        rows.push((name.to_string(), v.to_string()));
    }
    if let Some(noise) = &e.noise {
        for (loc, series) in noise {
            for (t, v) in series.iter().enumerate() {
                rows.push((format!("noise[{loc}|{}]", start + Duration::days(t as i64)), v.to_string()));
            }
        }
    }
    for (k, l) in &params.latent {
        for (j, v) in l.infections.iter().enumerate() {
            rows.push((format!("latent[{k}|{}]", l.start + j as i64), v.to_string()));
        }
    }
    let mut w = csv::Writer::from_writer(writer);
    let res = (|| -> csv::Result<()> {
        w.write_record(PARAMS_HEADER)?;
        for (name, v) in &rows {
            w.write_record([name, v])?;
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(csv_write_err)
}

pub fn save_params(path: &Path, params: &ModelParams, start: NaiveDate) -> Result<()> {
    write_params(create(path)?, params, start)
}

fn inner<'a>(name: &'a str, prefix: &str) -> Option<&'a str> {
    name.strip_prefix(prefix)?.strip_prefix('[')?.strip_suffix(']')
}

/// Inverse of [`write_params`]; every scalar must be present.
pub fn read_params<R: Read>(reader: R, label: &str, start: NaiveDate) -> Result<ModelParams> {
    let mut table = Table::new(reader, label, &PARAMS_HEADER)?;
    let mut r0 = BTreeMap::new();
    let mut covariates: Vec<String> = Vec::new();
    let mut beta: BTreeMap<(AgeGroup, String), f64> = BTreeMap::new();
    let mut dispersion = BTreeMap::new();
    let mut scalars: BTreeMap<String, f64> = BTreeMap::new();
    let mut noise: BTreeMap<String, BTreeMap<i64, f64>> = BTreeMap::new();
    let mut latent: BTreeMap<CompartmentKey, BTreeMap<i64, u64>> = BTreeMap::new();
    for row in table.rows() {
        let row = row?;
        let name = row.text(label, 0, "parameter")?;
        let v = row.number(label, 1, "value")?;
        let bad = |what: &str| parse_err(label, row.line, format!("malformed {what} name `{name}`"));
        if let Some(i) = inner(&name, "r0") {
            let (loc, age) = i.rsplit_once('|').ok_or_else(|| bad("r0"))?;
            r0.insert(CompartmentKey::new(loc, age.parse()?), v);
        } else if let Some(i) = inner(&name, "beta") {
            let (age, cov) = i.split_once('|').ok_or_else(|| bad("beta"))?;
            if !covariates.iter().any(|c| c == cov) {
                covariates.push(cov.to_string());
            }
            beta.insert((age.parse()?, cov.to_string()), v);
        } else if let Some(age) = inner(&name, "psi") {
            dispersion.insert(age.parse::<AgeGroup>()?, v);
        } else if let Some(i) = inner(&name, "noise") {
            let (loc, date) = i.rsplit_once('|').ok_or_else(|| bad("noise"))?;
            let date = NaiveDate::parse_from_str(date, "%Y-%m-%d").map_err(|_| bad("noise"))?;
            noise.entry(loc.to_string()).or_default().insert((date - start).num_days(), v);
        } else if let Some(i) = inner(&name, "latent") {
            let (key, day) = i.rsplit_once('|').ok_or_else(|| bad("latent"))?;
            let (loc, age) = key.rsplit_once('|').ok_or_else(|| bad("latent"))?;
            let day: i64 = day.parse().map_err(|_| bad("latent"))?;
            if v < 0.0 || v.fract() != 0.0 {
                return Err(parse_err(label, row.line, format!("latent count `{v}` is not a non-negative integer")));
            }
            latent
                .entry(CompartmentKey::new(loc, age.parse()?))
                .or_default()
                .insert(day, v as u64);
        } else {
            scalars.insert(name, v);
        }
    }
    let scalar = |n: &str| {
        scalars
            .get(n)
            .copied()
            .ok_or_else(|| parse_err(label, 0, format!("missing parameter `{n}`")))
    };

    let mut effects = EffectSet::new(r0, covariates.clone());
    for age in dispersion.keys() {
        let b = covariates
            .iter()
            .map(|c| {
                beta.get(&(*age, c.clone()))
                    .copied()
                    .ok_or_else(|| parse_err(label, 0, format!("missing parameter `beta[{age}|{c}]`")))
            })
            .collect::<Result<Vec<_>>>()?;
        effects.beta.insert(*age, b);
    }
    effects.noise_sd = scalar("noise_sd")?;
    if !noise.is_empty() {
        let mut out = BTreeMap::new();
        for (loc, days) in noise {
            let series: Vec<f64> = days.values().copied().collect();
            if days.keys().copied().ne(0..series.len() as i64) {
                return Err(parse_err(label, 0, format!("noise for `{loc}` must cover consecutive days from the start")));
            }
            out.insert(loc, series);
        }
        effects.noise = Some(out);
    }
    let mut latent_out = BTreeMap::new();
    for (key, days) in latent {
        let first = *days.keys().next().expect("non-empty");
        let infections: Vec<u64> = days.values().copied().collect();
        if days.keys().copied().ne(first..first + infections.len() as i64) {
            return Err(parse_err(label, 0, format!("latent days of {key} are not consecutive")));
        }
        latent_out.insert(
            key,
            LatentInfections {
                start: first,
                infections,
            },
        );
    }
    let params = ModelParams {
        effects,
        dispersion,
        reporting_rate: scalar("reporting_rate")?,
        generation: DelayDistribution::gamma_default(scalar("mu_gen")?, scalar("sd_gen")?)?,
        incubation: DelayDistribution::gamma_default(scalar("mu_inc")?, scalar("sd_inc")?)?,
        init_mean: scalar("mu_init")?,
        latent: latent_out,
    };
    params.validate()?;
    Ok(params)
}

pub fn load_params(path: &Path, start: NaiveDate) -> Result<ModelParams> {
    read_params(open(path)?, &path.display().to_string(), start)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draws() -> PosteriorDraws {
        let names = vec!["r0[a|15-34]".to_string(), "psi[15-34]".to_string(), "latent[a|15-34|0]".to_string()];
        let chain = |o: f64| (0..6).map(|k| vec![1.0 + o + k as f64 * 0.1, 0.5 - o, 3.0]).collect::<Vec<_>>();
        let chains = vec![chain(0.0), chain(0.01)];
        let monitored = vec![true, true, false];
        PosteriorDraws {
            rhat: chain_rhats(&chains, &monitored),
            names,
            monitored,
            chains,
            acceptance: BTreeMap::new(),
            n_burn: 100,
            n_keep: 12,
            thin: 2,
            final_params: Vec::new(),
        }
    }

    #[test]
    fn draws_round_trip() {
        let d = draws();
        let dir = tempfile::tempdir().unwrap();
        let paths = save_draws(dir.path(), &d).unwrap();
        let back = load_draws(&paths).unwrap();
        assert_eq!(back.names, d.names);
        assert_eq!(back.chains, d.chains);
        assert_eq!((back.n_burn, back.n_keep, back.thin), (100, 12, 2));
        assert_eq!(back.rhat, d.rhat);
        let text = std::fs::read_to_string(&paths[0]).unwrap();
        assert!(text.starts_with("iteration,parameter,value\n102,r0[a|15-34],1\n"));
    }

    #[test]
    fn truncated_draw_rejected() {
        let text = "iteration,parameter,value\n1,a,1\n1,b,2\n2,a,1\n";
        assert!(read_chain_draws(text.as_bytes(), "t").is_err());
        let swapped = "iteration,parameter,value\n1,a,1\n1,b,2\n2,b,1\n2,a,2\n";
        assert!(read_chain_draws(swapped.as_bytes(), "t").is_err());
    }

    #[test]
    fn summary_round_trip() {
        let rows = vec![
            ParameterSummary {
                parameter: "mu_gen".into(),
                mean: 5.5,
                sd: 0.1,
                q025: 5.3,
                q975: 5.7,
                rhat: Some(1.01),
            },
            ParameterSummary {
                parameter: "latent[x]".into(),
                mean: 3.0,
                sd: 0.0,
                q025: 3.0,
                q975: 3.0,
                rhat: None,
            },
        ];
        let mut buf = Vec::new();
        write_summary(&mut buf, &rows).unwrap();
        assert_eq!(read_summary(buf.as_slice(), "s").unwrap(), rows);
    }

    #[test]
    fn params_round_trip() {
        use crate::synthetic::{benchmark_scenario, ScenarioConfig};
        let cfg = ScenarioConfig {
            n_locations: 2,
            n_days: 20,
            ..ScenarioConfig::default()
        };
        let sc = benchmark_scenario(&cfg, 3).unwrap();
        let mut buf = Vec::new();
        write_params(&mut buf, &sc.params, cfg.start).unwrap();
        let back = read_params(buf.as_slice(), "p", cfg.start).unwrap();
        assert_eq!(back.effects, sc.params.effects);
        assert_eq!(back.dispersion, sc.params.dispersion);
        assert_eq!(back.latent, sc.params.latent);
        assert_eq!(back.generation.pmf(), sc.params.generation.pmf());
        assert_eq!(back.init_mean, sc.params.init_mean);
        let mut again = Vec::new();
        write_params(&mut again, &back, cfg.start).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn params_missing_scalar_rejected() {
        let text = "parameter,value\nr0[a|15-34],2\npsi[15-34],0.5\n";
        let err = read_params(text.as_bytes(), "p", chrono::NaiveDate::from_ymd_opt(2020, 3, 1).unwrap()).unwrap_err();
        assert!(err.to_string().contains("missing parameter"), "{err}");
    }
}

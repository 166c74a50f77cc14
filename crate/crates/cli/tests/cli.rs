use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spreadfit::inference::io::load_draws;
use spreadfit::inference::summarize;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_spreadfit"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn spreadfit")
}

fn ok(args: &[&str]) {
    let o = run(args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

const TOY: &str = "n_locations = 3\nages = [\"15-34\", \"35-59\"]\nn_days = 35\nnoise_sd = 0.0\ninit_mean = 20.0\n";

/// Small benchmark panel written by `simulate`.
fn toy_panel(dir: &Path, seed: &str) -> PathBuf {
    let cfg = dir.join("toy.toml");
    fs::write(&cfg, TOY).unwrap();
    let sim = dir.join("sim");
    ok(&["--config", s(&cfg), "--seed", seed, "--out", s(&sim), "simulate"]);
    sim
}

fn panel_args(sim: &Path) -> Vec<String> {
    [
        ("--cases", "cases.csv"),
        ("--populations", "populations.csv"),
        ("--covariates", "covariates.csv"),
        ("--covariate-meta", "covariates_meta.csv"),
    ]
    .iter()
    .flat_map(|(f, n)| [f.to_string(), sim.join(n).display().to_string()])
    .collect()
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    v.sort();
    v
}

#[test]
fn simulate_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["--seed", "1", "--out", s(&a), "simulate", "--horizon", "30"]);
    ok(&["--seed", "1", "--out", s(&b), "simulate", "--horizon", "30"]);
    assert_eq!(files(&a), files(&b));
    for f in files(&a).iter().filter(|f| *f != "manifest.json") {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let m: serde_json::Value = serde_json::from_str(&read(&a.join("manifest.json"))).unwrap();
    assert_eq!(m["command"], "simulate");
    assert_eq!(m["seed"], 1);
    let outputs = m["outputs"].as_array().unwrap();
    assert!(outputs.iter().any(|o| o["path"] == "cases.csv" && o["sha256"].as_str().unwrap().len() == 64));

    let c = dir.path().join("c");
    ok(&["--seed", "2", "--out", s(&c), "simulate", "--horizon", "30"]);
    assert_ne!(read(&a.join("cases.csv")), read(&c.join("cases.csv")));
}

#[test]
fn zero_horizon_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["--out", s(dir.path()), "simulate", "--horizon", "0"]);
    assert_eq!(read(&dir.path().join("cases.csv")), "onset_date,report_date,age_group,location,died\n");
}

#[test]
fn simulate_from_params_file_reproduces_benchmark() {
    let dir = tempfile::tempdir().unwrap();
    let sim = toy_panel(dir.path(), "4");
    let again = dir.path().join("again");
    let mut args = vec!["--seed", "4", "--out", s(&again), "simulate"];
    let params = sim.join("params.csv");
    let covs = sim.join("covariates.csv");
    let meta = sim.join("covariates_meta.csv");
    args.extend(["--params", s(&params), "--covariates", s(&covs), "--covariate-meta", s(&meta)]);
    ok(&args);
    assert_eq!(read(&sim.join("cases.csv")), read(&again.join("cases.csv")));
    assert_eq!(read(&sim.join("latent.csv")), read(&again.join("latent.csv")));
}

#[test]
fn fit_toy_panel_writes_draws_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let sim = toy_panel(dir.path(), "2");
    let fit = dir.path().join("fit");
    let mut args: Vec<String> = ["--seed", "9", "--out", s(&fit), "fit"].iter().map(|x| x.to_string()).collect();
    args.extend(panel_args(&sim));
    args.extend(["--burn-in", "1000", "--keep", "1000", "--thin", "10"].map(String::from));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(&refs);
    assert_eq!(files(&fit), ["draws_chain1.csv", "draws_chain2.csv", "manifest.json", "summary.csv"]);
    let summary = read(&fit.join("summary.csv"));
    let mut lines = summary.lines();
    assert_eq!(lines.next(), Some("parameter,mean,sd,q2.5,q97.5,rhat"));
    let first = lines.next().unwrap();
    assert!(first.starts_with("r0[L01|15-34],"));
    assert!(!first.ends_with(','), "rhat missing: {first}");
    let draws = read(&fit.join("draws_chain1.csv"));
    assert!(draws.starts_with("iteration,parameter,value\n1010,r0[L01|15-34],"));

    let m: serde_json::Value = serde_json::from_str(&read(&fit.join("manifest.json"))).unwrap();
    assert_eq!(m["inputs"].as_array().unwrap().len(), 4);
}

#[test]
fn reduced_form_flag_runs_growth_estimator() {
    let dir = tempfile::tempdir().unwrap();
    toy_panel(dir.path(), "3");
    let cfg = dir.path().join("rf.toml");
    fs::write(&cfg, "group_by = \"all\"\nbootstrap = 50\ncases = \"sim/cases.csv\"\npopulations = \"sim/populations.csv\"\n").unwrap();
    let out = dir.path().join("rf");
    ok(&["--config", s(&cfg), "--out", s(&out), "fit", "--reduced-form"]);
    assert_eq!(files(&out), ["manifest.json", "reduced_form.csv"]);
    let text = read(&out.join("reduced_form.csv"));
    assert!(text.starts_with("group,period,psi_hat,ci_low,ci_high,r_hat,"));
    // five weeks give four growth periods, each with all three locations
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().skip(1).all(|l| l.starts_with("all,") && l.contains(",3,")));
}

#[test]
fn exit_codes_separate_missing_files_from_bad_data() {
    let dir = tempfile::tempdir().unwrap();
    let sim = toy_panel(dir.path(), "1");
    let cases = sim.join("cases.csv");
    let pops = sim.join("populations.csv");
    let base = ["--out", s(dir.path()), "fit", "--cases", s(&cases), "--populations", s(&pops)];

    let missing = dir.path().join("absent.csv");
    let mut a = base.to_vec();
    a.extend(["--covariates", s(&missing)]);
    let o = run(&a);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "location,date,awareness\nL01,2020-03-01,yes\n").unwrap();
    let mut a = base.to_vec();
    a.extend(["--covariates", s(&bad)]);
    let o = run(&a);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    assert_eq!(run(&["fit", "--no-such-flag"]).status.code(), Some(2));
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "chains = \"two\"\n").unwrap();
    assert_eq!(run(&["--config", s(&cfg), "fit"]).status.code(), Some(2));
    let o = run(&["--out", s(dir.path()), "fit", "--cases", s(&cases), "--populations", s(&pops), "--chains", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

/// Draw files for one age and `covariates`, every beta set to `beta`.
fn write_draws(dir: &Path, covariates: &[&str], beta: f64) -> Vec<PathBuf> {
    (0..2)
        .map(|c| {
            let mut text = String::from("iteration,parameter,value\n");
            for k in 0..5 {
                let it = 10 * (k + 1);
                let wobble = 0.01 * (k as f64 + c as f64);
                text += &format!("{it},r0[L01|15-34],{}\n", 2.0 + wobble);
                text += &format!("{it},r0[L02|15-34],{}\n", 2.2 - wobble);
                for cov in covariates {
                    text += &format!("{it},beta[15-34|{cov}],{beta}\n");
                }
                text += &format!("{it},psi[15-34],{}\n", 0.5 + wobble);
                text += &format!("{it},mu_gen,5.5\n{it},mu_inc,5.5\n{it},mu_init,20\n");
            }
            let p = dir.join(format!("draws_chain{}.csv", c + 1));
            fs::write(&p, text).unwrap();
            p
        })
        .collect()
}

fn covariate_files(dir: &Path, names: &[&str]) -> (PathBuf, PathBuf, PathBuf) {
    let mut data = format!("location,date,{}\n", names.join(","));
    for loc in ["L01", "L02"] {
        for d in 1..=10 {
            let vals: Vec<String> = (0..names.len()).map(|j| format!("{}", 0.1 * (d + j) as f64)).collect();
            data += &format!("{loc},2020-03-{d:02},{}\n", vals.join(","));
        }
    }
    let mut meta = String::from("covariate,kind,center,scale\n");
    for n in names {
        if *n == "temperature" {
            meta += "temperature,standardized,10,8\n";
        } else {
            meta += &format!("{n},real,,\n");
        }
    }
    let pops = "location,age_group,population\nL01,15-34,1000\nL02,15-34,3000\n";
    let (a, b, c) = (dir.join("cov.csv"), dir.join("meta.csv"), dir.join("pops.csv"));
    fs::write(&a, data).unwrap();
    fs::write(&b, meta).unwrap();
    fs::write(&c, pops).unwrap();
    (a, b, c)
}

fn weather_file(dir: &Path) -> PathBuf {
    let mut text = String::from("location,date,temp_avg_c,rel_humidity_pct\n");
    let mut d = chrono::NaiveDate::from_ymd_opt(2019, 1, 1).unwrap();
    let end = chrono::NaiveDate::from_ymd_opt(2019, 12, 31).unwrap();
    let mut i = 0.0_f64;
    while d <= end {
        text += &format!("L01,{d},{},70\n", 10.0 + 10.0 * (i / 58.0).sin());
        d += chrono::Duration::days(1);
        i += 1.0;
    }
    let p = dir.join("weather.csv");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn zero_effects_report_zero_reduction_and_unit_multipliers() {
    let dir = tempfile::tempdir().unwrap();
    let covs = ["traced_ratio", "temperature"];
    let draws = write_draws(dir.path(), &covs, 0.0);
    let (cov, meta, pops) = covariate_files(dir.path(), &covs);
    let weather = weather_file(dir.path());
    let out = dir.path().join("rep");
    ok(&[
        "--out",
        s(&out),
        "report",
        "--draws",
        s(&draws[0]),
        s(&draws[1]),
        "--covariates",
        s(&cov),
        "--covariate-meta",
        s(&meta),
        "--populations",
        s(&pops),
        "--weather",
        s(&weather),
    ]);
    let effects = read(&out.join("effects.csv"));
    let rows: Vec<&str> = effects.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    for r in rows {
        let f: Vec<&str> = r.split(',').collect();
        assert_eq!(f[2], "0", "{r}");
        assert_eq!(f[6], "1", "{r}");
    }
    for label in ["tracing", "season"] {
        let t = read(&out.join(format!("total_effect_{label}.csv")));
        assert_eq!(t.lines().count(), 11);
        assert!(t.lines().skip(1).all(|l| l.ends_with(",1,1,1")), "{t}");
    }
    assert!(!out.join("total_effect_information.csv").exists());

    let seasonal = read(&out.join("seasonal.csv"));
    assert_eq!(seasonal.lines().count(), 366);
    assert!(seasonal.starts_with("day_of_year,raw_mean,smoothed_mean,"));
}

#[test]
fn offspring_table_matches_summarize() {
    let dir = tempfile::tempdir().unwrap();
    let draws = write_draws(dir.path(), &["traced_ratio"], -0.3);
    let out = dir.path().join("rep");
    ok(&["--out", s(&out), "report", "--fit-dir", s(dir.path())]);
    let summary = summarize(&load_draws(&draws).unwrap()).unwrap();
    let text = read(&out.join("offspring.csv"));
    let row: Vec<f64> = text.lines().nth(1).unwrap().split(',').skip(1).map(|v| v.parse().unwrap()).collect();
    let o = &summary.offspring[0];
    let expect = [&o.r0, &o.psi, &o.infecting_ratio, &o.top_share]
        .iter()
        .flat_map(|m| [m.mean, m.sd, m.q025, m.q975])
        .collect::<Vec<_>>();
    assert_eq!(row, expect);
    let eff = read(&out.join("effects.csv"));
    assert!(eff.lines().nth(1).unwrap().starts_with("15-34,traced_ratio,30"));
}

#[test]
fn mismatched_covariates_rejected_with_names() {
    let dir = tempfile::tempdir().unwrap();
    let draws = write_draws(dir.path(), &["traced_ratio"], -0.1);
    let (cov, meta, pops) = covariate_files(dir.path(), &["holiday"]);
    let o = run(&[
        "--out",
        s(&dir.path().join("rep")),
        "report",
        "--draws",
        s(&draws[0]),
        s(&draws[1]),
        "--covariates",
        s(&cov),
        "--covariate-meta",
        s(&meta),
        "--populations",
        s(&pops),
    ]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("traced_ratio") && err.contains("holiday"), "{err}");
}

#[test]
fn features_and_diagnostics_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let sim = toy_panel(dir.path(), "6");
    let out = dir.path().join("feat");
    let cases = sim.join("cases.csv");
    let pops = sim.join("populations.csv");
    let weather = sim.join("weather.csv");
    ok(&[
        "--out",
        s(&out),
        "features",
        "--cases",
        s(&cases),
        "--populations",
        s(&pops),
        "--weather",
        s(&weather),
        "--start",
        "2020-03-01",
        "--n-days",
        "35",
    ]);
    let covs = read(&out.join("covariates.csv"));
    assert!(covs.starts_with("location,date,incidence_info,cumulative_incidence,traced_ratio,temperature,humidity,"));
    assert_eq!(covs.lines().count(), 1 + 3 * 35);
    let growth = read(&out.join("growth_rates.csv"));
    assert_eq!(growth.lines().count(), 1 + 3 * 4);

    let dg = dir.path().join("dg");
    ok(&["--out", s(&dg), "diagnostics", "--cases", s(&cases)]);
    assert!(read(&dg.join("cfr.csv")).starts_with("age_group,month,cases,deaths,cfr\n"));
    assert!(read(&dg.join("cfr.csv")).contains("15-34,all,"));
    assert!(read(&dg.join("asymptomatic.csv")).starts_with("age_group,month,total,asymptomatic,ratio\n"));
}

//! `spreadfit`: simulate, fit and report overdispersed renewal models.

mod commands;
mod config;
mod inputs;
mod manifest;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Config;

#[derive(Debug, Parser)]
#[command(name = "spreadfit", version, about = "Overdispersed renewal models: simulate, fit, report")]
struct Cli {
    /// Master seed; every random stream derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

/// Panel tables shared by several commands.
#[derive(Debug, Clone, Default, Args)]
pub struct PanelArgs {
    /// Line list `onset_date,report_date,age_group,location,died`.
    #[arg(long)]
    pub cases: Option<PathBuf>,
    #[arg(long)]
    pub populations: Option<PathBuf>,
    /// Wide covariate table `location,date,...`.
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    /// Covariate kinds and standardization `covariate,kind,center,scale`.
    #[arg(long)]
    pub covariate_meta: Option<PathBuf>,
    /// First panel day (YYYY-MM-DD).
    #[arg(long)]
    pub start: Option<chrono::NaiveDate>,
    /// Number of panel days.
    #[arg(long)]
    pub n_days: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a panel from a parameter file or the built-in benchmark scenario.
    Simulate(commands::simulate::SimulateArgs),
    /// Fit the renewal model (or the reduced-form estimator) to a panel.
    Fit(commands::fit::FitArgs),
    /// Posterior tables, total-effect series and the seasonal profile.
    Report(commands::report::ReportArgs),
    /// Build covariates and weekly growth rates from raw tables.
    Features(commands::features::FeaturesArgs),
    /// Case-fatality and asymptomatic-share tables from a line list.
    Diagnostics(commands::diagnostics::DiagnosticsArgs),
}

/// What every command sees: merged configuration, seed and output directory.
pub struct Context {
    pub config: Config,
    pub config_path: Option<PathBuf>,
    pub seed: u64,
    pub out: PathBuf,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let seed = cli.seed.or(config.seed).unwrap_or(1);
    std::fs::create_dir_all(&cli.out)
        .map_err(|e| anyhow::anyhow!("cannot create output directory {}: {e}", cli.out.display()))?;
    let ctx = Context {
        config,
        config_path: cli.config.clone(),
        seed,
        out: cli.out.clone(),
    };
    match cli.command {
        Command::Simulate(a) => commands::simulate::run(&ctx, &a),
        Command::Fit(a) => commands::fit::run(&ctx, &a),
        Command::Report(a) => commands::report::run(&ctx, &a),
        Command::Features(a) => commands::features::run(&ctx, &a),
        Command::Diagnostics(a) => commands::diagnostics::run(&ctx, &a),
    }
}

/// 2 usage or configuration, 3 rejected data, 4 numerical failure.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<spreadfit::Error>() {
        Some(e) if e.is_data_error() => 3,
        Some(e) if e.is_numerical_error() => 4,
        _ => 2,
    }
}

/// The error chain, skipping causes already spelled out by their parent.
fn message(err: &anyhow::Error) -> String {
    let mut msg = err.to_string();
    for cause in err.chain().skip(1) {
        let s = cause.to_string();
        if !msg.contains(&s) {
            msg.push_str(": ");
            msg.push_str(&s);
        }
    }
    msg
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", message(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

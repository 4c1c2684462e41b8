//! Command-line driver: synthetic data generation, daily fits, rolling
//! experiments, metric tables, MCS and reports.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 compute error.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::{parse_horizons, parse_models, Overrides, RunConfig};
use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "ivs", version, about = "Implied volatility surface forecasting experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Worker threads for the parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated horizons, e.g. `1,5,30`.
    #[arg(long)]
    pub horizons: Option<String>,
    /// Comma-separated model ids, e.g. `RT,CT-VAR`.
    #[arg(long)]
    pub models: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic quote series and its generating coefficients.
    Generate(ConfigArgs),
    /// Fit daily GG/CT coefficients, the in-sample decay and the tree.
    Fit(ConfigArgs),
    /// Rolling forecasts, metric tables, MCS and a replayable manifest.
    Run(ConfigArgs),
    /// Recompute metric tables from a run directory.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute the MCS tables from a run directory.
    Mcs {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Text tables and a long-format CSV over one or more runs.
    Report {
        #[arg(long, required = true)]
        run: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn resolve(args: &ConfigArgs) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(&args.config)?;
    cfg.apply(&Overrides {
        seed: args.seed,
        horizons: args.horizons.as_deref().map(parse_horizons).transpose()?,
        models: args.models.as_deref().map(parse_models).transpose()?,
    });
    cfg.validate()?;
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Generate(a) => commands::cmd_generate(&resolve(a)?, &a.out),
        Command::Fit(a) => commands::cmd_fit(&resolve(a)?, &a.out),
        Command::Run(a) => commands::cmd_run(&resolve(a)?, &a.out),
        Command::Evaluate { run, out } => commands::cmd_evaluate(run, out),
        Command::Mcs { run, out, seed } => commands::cmd_mcs(run, out, *seed),
        Command::Report { run, out } => {
            let dirs: Vec<&std::path::Path> = run.iter().map(PathBuf::as_path).collect();
            commands::cmd_report(&dirs, out)
        }
    }
}

/// Runs a parsed command inside a pool capped at `--threads`.
pub fn run(cli: &Cli) -> CliResult<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be >= 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    pool.install(|| execute(cli))
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use bhsteer::cli_io::{self, CliError, CompareOptions, CsvTable, RunManifest};
use bhsteer::estimators::CorrelationSeries;
use bhsteer::model::ChainConfig;
use bhsteer::sde::{RunOptions, Scheme};

/// Entanglement and EPR steering in Bose-Hubbard chains.
#[derive(Parser)]
#[command(name = "bhsteer", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a positive-P ensemble.
    Run(RunArgs),
    /// Closed-form curves (2 or 3 wells, no interactions).
    Analytic(ConfigArgs),
    /// Exact Fock-space propagation for small atom numbers.
    Oracle(ConfigArgs),
    /// Compare two series files.
    Compare(CompareArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config, or the manifest of an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config entry, e.g. `--set nonlinearity=1e-3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// CSV destination; a manifest is written next to it. Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: ConfigArgs,
    /// `em`, `midpoint` or `midpoint:<iterations>`.
    #[arg(long)]
    scheme: Option<Scheme>,
    #[arg(long)]
    traj: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct CompareArgs {
    a: PathBuf,
    b: PathBuf,
    /// Write the machine-readable report here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = CompareOptions::default().sigma)]
    sigma: f64,
    #[arg(long, default_value_t = CompareOptions::default().min_fraction)]
    min_fraction: f64,
    #[arg(long, default_value_t = CompareOptions::default().abs_tol)]
    abs_tol: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Analytic(args) => exact("analytic", args, cli_io::analytic_series),
        Command::Oracle(args) => exact("oracle", args, cli_io::oracle_series),
        Command::Compare(args) => compare(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::ComparisonFailed(_) => {}
                other => eprintln!("error: {other}"),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

struct Finished<'a> {
    command: &'a str,
    config: &'a ChainConfig,
    scheme: String,
    workers: Option<usize>,
    n_traj: usize,
    n_diverged: usize,
    started: Instant,
}

fn emit(out: Option<&Path>, series: &CorrelationSeries, done: Finished) -> Result<(), CliError> {
    let csv = cli_io::write_csv(series);
    let Some(path) = out else {
        print!("{csv}");
        return Ok(());
    };
    cli_io::write_file(path, &csv)?;
    let manifest = RunManifest {
        command: done.command.to_string(),
        version: cli_io::VERSION.to_string(),
        config: done.config.clone(),
        scheme: done.scheme,
        seed: done.config.seed,
        workers: done.workers,
        wall_time_s: done.started.elapsed().as_secs_f64(),
        n_traj: done.n_traj,
        n_diverged: done.n_diverged,
        outputs: vec![path.to_path_buf()],
    };
    cli_io::write_file(&RunManifest::path_for(path), &manifest.to_json())
}

fn run(args: RunArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let mut overrides = args.common.overrides.clone();
    overrides.extend(args.traj.map(|n| format!("n_traj={n}")));
    overrides.extend(args.seed.map(|s| format!("seed=\"{s}\"")));
    let loaded = cli_io::load_config(args.common.config.as_deref(), &overrides)?;
    let scheme = args.scheme.or(loaded.scheme).unwrap_or_default();
    let options = RunOptions { scheme, workers: args.workers, ..RunOptions::default() };
    let (series, result) = cli_io::ensemble_series(&loaded.config, &options)?;
    eprintln!(
        "{} trajectories, {} diverged, {:.2} s",
        result.n_traj,
        result.n_diverged,
        started.elapsed().as_secs_f64()
    );
    let done = Finished {
        command: "run",
        config: &loaded.config,
        scheme: scheme.to_string(),
        workers: args.workers,
        n_traj: result.n_traj,
        n_diverged: result.n_diverged,
        started,
    };
    emit(args.common.out.as_deref(), &series, done)
}

fn exact(
    command: &str,
    args: ConfigArgs,
    build: fn(&ChainConfig) -> Result<CorrelationSeries, CliError>,
) -> Result<(), CliError> {
    let started = Instant::now();
    let loaded = cli_io::load_config(args.config.as_deref(), &args.overrides)?;
    let series = build(&loaded.config)?;
    let done = Finished {
        command,
        config: &loaded.config,
        scheme: "exact".to_string(),
        workers: None,
        n_traj: 0,
        n_diverged: 0,
        started,
    };
    emit(args.out.as_deref(), &series, done)
}

fn compare(args: CompareArgs) -> Result<(), CliError> {
    let a = CsvTable::parse(&cli_io::read_file(&args.a)?)?;
    let b = CsvTable::parse(&cli_io::read_file(&args.b)?)?;
    let options = CompareOptions {
        sigma: args.sigma,
        min_fraction: args.min_fraction,
        abs_tol: args.abs_tol,
    };
    let report = cli_io::compare_tables(&a, &b, &options)?;
    print!("{}", report.to_text());
    if let Some(path) = &args.out {
        cli_io::write_file(path, &report.to_json())?;
    }
    if report.passed {
        Ok(())
    } else {
        Err(CliError::ComparisonFailed(Box::new(report)))
    }
}

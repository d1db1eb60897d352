//! Command-line driver: parses arguments and a TOML run configuration,
//! dispatches to one analysis, and writes CSV reports plus a JSON manifest.
//!
//! Exit codes: 0 when every check passes, 1 when a check fails, 2 for
//! configuration errors and 3 for numerical or I/O failures.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::{Analysis, RunConfig, SCHEMA_VERSION};
use crate::error::CliError;

pub const DEFAULT_OUT_DIR: &str = "stocycle-out";

#[derive(Debug, Parser)]
#[command(name = "stocycle", version, about = "Small-noise analysis of stochastic limit-cycle oscillators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Random seed (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for the parallel stages (overrides the config).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the model's derivatives and diffusion matrix.
    Validate,
    /// Limit cycle, curvature, prefactor, marginal and entropy table.
    CycleReport,
    /// Monte Carlo check of the Gaussian tube and of the stationary cycle law.
    CltCheck,
    /// Randomized error-slope study of the Laplace expansions.
    LaplaceCheck,
    /// Space-time scaling table and drift-convergence verdict.
    Scaling,
    /// Run the analysis named in the config.
    Run,
    /// Describe a built-in model.
    Describe { name: String },
}

/// Parse `args` (including the program name), run, and report on `stdout`
/// and `stderr`. Returns the process exit code.
pub fn execute<I, S>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if code == 0 {
                write!(stdout, "{e}")
            } else {
                write!(stderr, "{e}")
            };
            return code;
        }
    };
    match dispatch(&cli, stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(cli: &Cli, analysis: Option<Analysis>) -> Result<RunConfig, CliError> {
    match &cli.config {
        Some(path) => RunConfig::load(path),
        // Analyses without a model run from defaults.
        None if matches!(analysis, Some(Analysis::LaplaceCheck | Analysis::Scaling)) => {
            RunConfig::from_toml(&format!("schema_version = {SCHEMA_VERSION}\n"))
        }
        None => Err(CliError::Config("--config is required".into())),
    }
}

fn dispatch(cli: &Cli, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let analysis = match &cli.command {
        Command::Describe { name } => {
            let text = commands::describe(name, cli.json)?;
            writeln!(stdout, "{}", text.trim_end())?;
            return Ok(0);
        }
        Command::Validate => Analysis::Validate,
        Command::CycleReport => Analysis::CycleReport,
        Command::CltCheck => Analysis::CltCheck,
        Command::LaplaceCheck => Analysis::LaplaceCheck,
        Command::Scaling => Analysis::Scaling,
        Command::Run => {
            let cfg = load_config(cli, None)?;
            let a = cfg
                .analysis
                .ok_or_else(|| CliError::Config("`run` needs `analysis` in the config".into()))?;
            return run_with(cli, cfg, a, stdout);
        }
    };
    let cfg = load_config(cli, Some(analysis))?;
    run_with(cli, cfg, analysis, stdout)
}

fn run_with(cli: &Cli, mut cfg: RunConfig, analysis: Analysis, stdout: &mut dyn Write) -> Result<i32, CliError> {
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(CliError::Config("--workers must be positive".into()));
        }
        cfg.workers = Some(w);
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    let report = commands::run_analysis(analysis, &cfg, cfg.workers)?;
    let (path, json) = output::write_report(&out, analysis.name(), cfg.seed, cfg.workers, &cfg, &report)?;
    if cli.json {
        writeln!(stdout, "{json}")?;
    } else {
        for c in &report.checks {
            writeln!(
                stdout,
                "{} {}: {:e} {} {:e}",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.value,
                c.relation,
                c.threshold
            )?;
        }
        writeln!(stdout, "manifest: {}", path.display())?;
    }
    Ok(if report.passed() { 0 } else { 1 })
}

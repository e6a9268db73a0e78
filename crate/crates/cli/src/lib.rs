//! Command-line front end: reads a TOML run configuration, dispatches one
//! computation and emits a JSON report.

pub mod commands;
pub mod config;
pub mod report;

use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, ValueEnum};
use vparisi_core::{Backend, Error};

pub use config::RunConfig;
pub use report::{Check, Report};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_BUDGET: i32 = 4;
pub const EXIT_NUMERICAL: i32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Validate,
    Phi,
    Parisi,
    Phistar,
    Optimize,
    RpcCheck,
    Fe,
    FeConstrained,
    CovCheck,
    Gg,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Phi => "phi",
            Command::Parisi => "parisi",
            Command::Phistar => "phistar",
            Command::Optimize => "optimize",
            Command::RpcCheck => "rpc-check",
            Command::Fe => "fe",
            Command::FeConstrained => "fe-constrained",
            Command::CovCheck => "cov-check",
            Command::Gg => "gg",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Quadrature,
    Mc,
}

#[derive(Debug, Parser)]
#[command(
    name = "vparisi",
    version,
    about = "Variational free energy of vector-spin mixed p-spin models"
)]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the configuration's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `eval.backend`.
    #[arg(long, value_enum)]
    pub backend: Option<BackendArg>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Size of the worker pool (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Budget(_) | Error::Infeasible(_) => EXIT_BUDGET,
        Error::Numerical(_) => EXIT_NUMERICAL,
        _ => EXIT_VALIDATION,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::new(exit_code(&e), e.to_string())
    }
}

/// Parses `text`, applies the overrides and runs `command` on the current
/// thread pool.
pub fn run_config(
    command: Command,
    text: &str,
    seed: Option<u64>,
    backend: Option<Backend>,
) -> Result<Report, Failure> {
    let start = Instant::now();
    let mut config = RunConfig::parse(text)
        .map_err(|e| Failure::new(EXIT_PARSE, format!("parse error: {e}")))?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(b) = backend {
        config.eval.backend = b;
    }
    let resolved = config
        .resolve()
        .map_err(|e| Failure::new(exit_code(&e.error), format!("invalid config: {e}")))?;
    let outcome = commands::dispatch(command, &config, &resolved)?;
    Ok(Report {
        command: command.name().to_string(),
        config_digest: report::digest(text.as_bytes()),
        seed: config.seed,
        backend: resolved.eval.backend,
        value: outcome.value,
        std_error: outcome.std_error,
        components: outcome.components,
        checks: outcome.checks,
        budgets: report::Budgets::from_eval(&resolved.eval),
        runtime_ms: start.elapsed().as_millis() as u64,
    })
}

/// Full command-line entry point; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&cli.config).map_err(|e| {
        Failure::new(
            EXIT_PARSE,
            format!("cannot read {}: {e}", cli.config.display()),
        )
    })?;
    let backend = cli.backend.map(|b| match b {
        BackendArg::Quadrature => Backend::Quadrature,
        BackendArg::Mc => Backend::MonteCarlo,
    });
    let report = match cli.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Failure::new(EXIT_VALIDATION, e.to_string()))?;
            pool.install(|| run_config(cli.command, &text, cli.seed, backend))?
        }
        None => run_config(cli.command, &text, cli.seed, backend)?,
    };
    let out = cli
        .out
        .clone()
        .or_else(|| RunConfig::parse(&text).ok().and_then(|c| c.out));
    let json = report.to_json();
    match out {
        Some(path) => std::fs::write(&path, json + "\n").map_err(|e| {
            Failure::new(
                EXIT_VALIDATION,
                format!("cannot write {}: {e}", path.display()),
            )
        })?,
        None => println!("{json}"),
    }
    Ok(())
}

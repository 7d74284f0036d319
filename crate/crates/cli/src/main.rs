//! `mixjump`: run the fractional-Laplacian checks and the Monte Carlo
//! experiments from TOML configs.
//!
//! Exit status is 0 when every verdict passes, 1 when one fails, 2 for a
//! bad config or I/O error and 3 when the numerics fail (an accuracy or
//! budget error, for instance).

mod config;
mod error;
mod experiments;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ExperimentConfig, FraclapMode};
use error::CliError;
use experiments::Outcome;

#[derive(Parser)]
#[command(name = "mixjump", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Paths per estimate; overrides the config.
    #[arg(long, global = true)]
    n: Option<usize>,

    /// Worker threads. Results do not depend on it.
    #[arg(long, global = true, env = "MIXJUMP_WORKERS")]
    workers: Option<usize>,

    /// Directory for `<kind>.json` and `<kind>.csv`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form sanity checks (a few seconds).
    Selftest,
    /// Truncated fractional Laplacian of powers, of h_p, or of the test functions.
    Fraclap {
        #[arg(long, value_enum)]
        mode: Option<FraclapMode>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        lo: Option<f64>,
        #[arg(long)]
        hi: Option<f64>,
        #[arg(long)]
        points: Option<usize>,
    },
    /// Exit-box estimates across truncation scales.
    Exit,
    /// Lévy-system identity for a ball and a shell.
    Levysystem,
    /// Brownian-stable scaling in law.
    Scaling,
    /// Harnack inequality in a ball.
    Harnack,
    /// Carleson estimate at a boundary point.
    Carleson,
    /// Boundary Harnack principle on a C^{1,1} domain.
    Bhp,
    /// Lower bound on the probability of leaving through the complement.
    Lowerbound,
}

fn load(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.n.is_some() {
        cfg.n = cli.n;
    }
    if cli.workers.is_some() {
        cfg.workers = cli.workers;
    }
    if let Command::Fraclap {
        mode,
        d,
        alpha,
        p,
        lambda,
        lo,
        hi,
        points,
    } = &cli.command
    {
        let f = &mut cfg.fraclap;
        f.mode = mode.unwrap_or(f.mode);
        f.d = d.unwrap_or(f.d);
        f.alpha = alpha.unwrap_or(f.alpha);
        f.p = p.or(f.p);
        f.lambda = lambda.unwrap_or(f.lambda);
        f.lo = lo.unwrap_or(f.lo);
        f.hi = hi.unwrap_or(f.hi);
        f.points = points.unwrap_or(f.points);
    }
    Ok(cfg)
}

fn dispatch(command: &Command, cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    match command {
        Command::Selftest => experiments::selftest(cfg),
        Command::Fraclap { .. } => experiments::fraclap(cfg),
        Command::Exit => experiments::exit(cfg),
        Command::Levysystem => experiments::levysystem(cfg),
        Command::Scaling => experiments::scaling(cfg),
        Command::Harnack => experiments::harnack(cfg),
        Command::Carleson => experiments::carleson(cfg),
        Command::Bhp => experiments::bhp(cfg),
        Command::Lowerbound => experiments::lowerbound(cfg),
    }
}

fn run(cli: &Cli) -> Result<bool, CliError> {
    let cfg = load(cli)?;
    let workers = cfg.workers.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    let outcome = pool.install(|| dispatch(&cli.command, &cfg))?;
    if let Some(dir) = &cli.out {
        output::write_dir(dir, &cfg, &outcome)?;
    }
    let mut stdout = std::io::stdout().lock();
    output::summary(&outcome, &mut stdout).map_err(|e| CliError::Io("stdout".into(), e))?;
    Ok(outcome.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("mixjump: {e}");
            ExitCode::from(e.status() as u8)
        }
    }
}

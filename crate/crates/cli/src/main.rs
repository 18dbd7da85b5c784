#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use isocov::evaluation::StudyConfig;
use serde::de::DeserializeOwned;
use serde::Serialize;

mod artifacts;
mod commands;
mod data;

use commands::{ApproximateConfig, EvaluateConfig, FitCommandConfig, IngestConfig, Outcome, SimulateConfig};

/// Nonparametric isotropic covariance estimation.
#[derive(Debug, Parser)]
#[command(name = "isocov", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML configuration file; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,

    /// Output directory.
    #[arg(long, short, global = true, default_value = ".")]
    out: PathBuf,

    /// Worker threads (all cores by default).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(flatten)]
    overrides: Overrides,
}

/// Flags that override the corresponding configuration keys.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Study and simulation at r = 200 with 100 Monte Carlo runs.
    #[arg(long, global = true)]
    pub full_scale: bool,

    /// Fix the sieve order.
    #[arg(long, global = true)]
    pub m: Option<usize>,

    /// Estimate a nugget.
    #[arg(long, global = true)]
    pub nugget: bool,

    /// Two-way ANOVA detrending before estimation.
    #[arg(long, global = true)]
    pub detrend: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate replicates of a Gaussian field at random sites.
    Simulate,
    /// Best sieve approximation of a parametric covariance.
    Approximate,
    /// Sieve maximum likelihood fit of a site-by-replicate CSV.
    Fit {
        #[arg(long)]
        data: PathBuf,
    },
    /// Score a fitted model against a simulation setting.
    Evaluate {
        #[arg(long)]
        estimate: PathBuf,
    },
    /// Monte Carlo comparison of estimators.
    McStudy,
    /// Complete-case filtering, projection and detrending of a station panel.
    Ingest {
        #[arg(long)]
        data: PathBuf,
    },
}

/// A failed run with its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Failure::usage(format!("{}: {e}", path.display()))
    }
}

impl From<isocov::Error> for Failure {
    fn from(e: isocov::Error) -> Self {
        let code = match e {
            isocov::Error::Convergence { .. } => 3,
            isocov::Error::Conditioning { .. } => 4,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Failure> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::io(p, e))?;
            toml::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))
        }
    }
}

/// Prints the config for `--print-config`, otherwise runs the command.
fn finish<T: Serialize>(
    common: &Common,
    cfg: &T,
    run: impl FnOnce(&T) -> Result<Outcome, Failure>,
) -> Result<Option<String>, Failure> {
    if common.print_config {
        print!("{}", toml::to_string(cfg).expect("configs serialize to TOML"));
        return Ok(None);
    }
    let outcome = run(cfg)?;
    let written = outcome.artifacts.write(&common.out)?;
    for f in &written {
        println!("{}", common.out.join(f).display());
    }
    Ok(outcome.warning)
}

fn run(cli: Cli) -> Result<Option<String>, Failure> {
    let common = &cli.common;
    let o = &common.overrides;
    if let Some(t) = common.threads {
        if t == 0 {
            return Err(Failure::usage("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::usage(e.to_string()))?;
    }
    let path = common.config.as_deref();
    match &cli.command {
        Command::Simulate => {
            let mut cfg: SimulateConfig = load(path)?;
            cfg.apply(o);
            finish(common, &cfg, SimulateConfig::run)
        }
        Command::Approximate => {
            let mut cfg: ApproximateConfig = load(path)?;
            cfg.apply(o);
            finish(common, &cfg, ApproximateConfig::run)
        }
        Command::Fit { data } => {
            let mut cfg: FitCommandConfig = load(path)?;
            cfg.apply(o);
            finish(common, &cfg, |c| c.run(data))
        }
        Command::Evaluate { estimate } => {
            let cfg: EvaluateConfig = load(path)?;
            finish(common, &cfg, |c| c.run(estimate))
        }
        Command::McStudy => {
            let mut cfg: StudyConfig = load(path)?;
            commands::study_apply(&mut cfg, o);
            finish(common, &cfg, commands::run_study)
        }
        Command::Ingest { data } => {
            let mut cfg: IngestConfig = load(path)?;
            cfg.apply(o);
            finish(common, &cfg, |c| c.run(data))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(warning)) => {
            eprintln!("warning: {warning}");
            ExitCode::from(3)
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

//! Command-line front end for the `netbridge` solvers.
//!
//! `netbridge <subcommand> --config problem.json --out-dir out/` reads a
//! problem file (or a `manifest.json` from an earlier run), solves it and
//! writes JSON/CSV results next to a manifest that reproduces the run.

pub mod commands;
pub mod config;
pub mod experiment;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde_json::json;

use commands::{execute, parse_input, Input, RunOptions, VerifyFailed};
use config::ConfigError;
use output::OutDir;

#[derive(Debug, Parser)]
#[command(name = "netbridge", version, about = "Most-likely network flows from aggregate marginals")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Problem file, or a manifest.json from an earlier run
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Endpoint residual (L1) at which the Sinkhorn loop stops
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[arg(long, global = true)]
    pub max_iter: Option<usize>,
    /// Iterate on plain potentials instead of logarithms
    #[arg(long, global = true)]
    pub no_log_domain: bool,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Use phi_t in the creation row of the parking posterior (rows then fail to sum to one)
    #[arg(long, global = true)]
    pub strict_eq23: bool,
    /// Largest path tensor the brute-force oracle may build
    #[arg(long, global = true)]
    pub cap: Option<usize>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Single-commodity bridge
    Single,
    /// Several commodities observed in aggregate
    Multi,
    /// Killing and creation through a parking state
    Unbalanced {
        /// Several commodities sharing one parking state (experimental)
        #[arg(long)]
        multi_commodity: bool,
    },
    /// Compare the solver with the brute-force oracle
    Verify,
    /// Draw a population from the prior
    Sample {
        #[arg(long)]
        population: Option<usize>,
    },
    /// Synthetic cars-and-trucks scenario on a 19-node road network
    Experiment,
}

/// Flags override the manifest, which overrides the defaults.
fn merge(cli: &Cli, base: Option<RunOptions>) -> RunOptions {
    let base = base.unwrap_or_default();
    RunOptions {
        tol: cli.tol.unwrap_or(base.tol),
        max_iter: cli.max_iter.unwrap_or(base.max_iter),
        log_domain: base.log_domain && !cli.no_log_domain,
        strict_eq23: base.strict_eq23 || cli.strict_eq23,
        cap: cli.cap.unwrap_or(base.cap),
        seed: cli.seed.unwrap_or(base.seed),
        population: match &cli.command {
            Command::Sample { population: Some(p) } => *p,
            _ => base.population,
        },
        multi_commodity: base.multi_commodity
            || matches!(cli.command, Command::Unbalanced { multi_commodity: true }),
    }
}

fn validate_flags(o: &RunOptions) -> anyhow::Result<()> {
    if !(o.tol > 0.0) || !o.tol.is_finite() {
        return Err(ConfigError(format!("--tol must be positive, got {}", o.tol)).into());
    }
    if o.max_iter == 0 || o.population == 0 {
        return Err(ConfigError("--max-iter and --population must be positive".into()).into());
    }
    Ok(())
}

/// Caps the rayon pool from `NETBRIDGE_THREADS`.
pub fn configure_threads() -> anyhow::Result<()> {
    let Ok(value) = std::env::var("NETBRIDGE_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| ConfigError(format!("NETBRIDGE_THREADS must be a positive integer, got `{value}`")))?;
    // A pool may already exist when embedded; the existing one is kept
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

pub fn run(cli: &Cli) -> anyhow::Result<Vec<String>> {
    configure_threads()?;
    let (config, base) = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
            match parse_input(&text)? {
                Input::Config(c) => (c, None),
                Input::Manifest(m) => (m.config, Some(m.options)),
            }
        }
        None => match cli.command {
            Command::Experiment => (commands::default_experiment(), None),
            Command::Verify => (commands::bundled_verify_config(), None),
            _ => return Err(ConfigError("--config is required".into()).into()),
        },
    };
    let options = merge(cli, base);
    validate_flags(&options)?;
    let mut out = OutDir::create(&cli.out_dir)?;
    let report = execute(&cli.command, config, options, &mut out)?;
    Ok(report.lines)
}

/// 0 success, 2 invalid input, 3 no convergence, 4 infeasible, 1 anything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    if err.downcast_ref::<VerifyFailed>().is_some() {
        return 1;
    }
    match err.downcast_ref::<netbridge::Error>() {
        Some(netbridge::Error::NotConverged { .. }) => 3,
        Some(netbridge::Error::Infeasible(_)) => 4,
        Some(_) => 2,
        None => 1,
    }
}

pub fn error_json(err: &anyhow::Error) -> String {
    let kind = match exit_code(err) {
        2 => "invalid_input",
        3 => "not_converged",
        4 => "infeasible",
        _ if err.downcast_ref::<VerifyFailed>().is_some() => "verification_failed",
        _ => "failure",
    };
    let mut doc = json!({ "error": kind, "exit_code": exit_code(err), "message": format!("{err:#}") });
    if let Some(netbridge::Error::NotConverged { iterations, residual }) = err.downcast_ref::<netbridge::Error>() {
        doc["iterations"] = json!(iterations);
        doc["residual"] = json!(residual);
    }
    doc.to_string()
}

//! Command-line front end: every computation as a subcommand with a JSON
//! config and JSON or CSV reports, deterministic under a seed.
//!
//! Exit codes: 0 success, 2 configuration error, 3 infeasible parameters,
//! 4 numerical failure.

// validation guards use `!(x > 0.0)` so NaN fails closed
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod report;

use std::io::Write;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::{CliError, RunConfig};

#[derive(Parser)]
#[command(name = "grftails", version, about = "Tail asymptotics of exponential integrals of smooth Gaussian fields")]
struct Cli {
    /// Path to the JSON run configuration.
    #[arg(long, global = true)]
    config: Option<String>,

    /// RNG seed; overrides `mc.seed` from the config. Mandatory (here or in
    /// the config) for Monte Carlo subcommands.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; overrides GRFTAILS_WORKERS and `mc.workers`.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<String>,

    /// Report format; `csv` is only meaningful for tabular subcommands.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Spectral moments of the (standardized) kernel.
    Moments,
    /// Threshold, constant and probability of the tail approximation.
    Approx,
    /// Root and closed form of the threshold equation.
    USolve,
    /// Tail constant by its closed form and by quadrature.
    HConst,
    /// Inner/outer panel covers of the domain.
    Cover,
    /// Approximation vs importance sampling across thresholds (CSV rows).
    Validate,
    /// Raw field draws as CSV rows (node coordinates, value) for plotting.
    Sample,
    /// Sum-of-panels vs union importance-sampling estimates.
    PanelsVsUnion,
    /// Supremum exceedance estimates and the fitted rate constant.
    Suprate,
    /// One-big-jump approximation vs IS estimate for a log-normal sum.
    Lognormal,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(rendered) => {
            let out = match &cli.out {
                Some(path) => std::fs::write(path, rendered.as_bytes())
                    .map_err(|e| CliError::Config(format!("cannot write {path}: {e}"))),
                None => {
                    let mut stdout = std::io::stdout();
                    stdout
                        .write_all(rendered.as_bytes())
                        .and_then(|_| stdout.flush())
                        .map_err(|e| CliError::Config(format!("stdout: {e}")))
                }
            };
            match out {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(e),
            }
        }
        Err(e) => fail(e),
    }
}

fn fail(e: CliError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code())
}

fn run(cli: &Cli) -> Result<String, CliError> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    let raw = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {path}: {e}")))?;
    let mut config: RunConfig = serde_json::from_str(&raw)
        .map_err(|e| CliError::Config(format!("invalid config JSON: {e}")))?;
    config.apply_overrides(cli.seed, cli.workers);

    let format = cli.format.unwrap_or(match cli.command {
        Command::Validate | Command::Sample => Format::Csv,
        _ => Format::Json,
    });
    let json_only = |what: &str| -> Result<(), CliError> {
        if format == Format::Csv {
            return Err(CliError::Config(format!(
                "{what} reports are JSON only; drop --format csv"
            )));
        }
        Ok(())
    };

    match cli.command {
        Command::Moments => {
            json_only("moments")?;
            report::moments(&config)
        }
        Command::Approx => {
            json_only("approx")?;
            report::approx(&config)
        }
        Command::USolve => {
            json_only("u-solve")?;
            report::u_solve(&config)
        }
        Command::HConst => {
            json_only("h-const")?;
            report::h_const(&config)
        }
        Command::Cover => {
            json_only("cover")?;
            report::cover(&config)
        }
        Command::Validate => report::validate(&config, format == Format::Csv),
        Command::Sample => {
            if format == Format::Json {
                return Err(CliError::Config(
                    "sample dumps are CSV only; drop --format json".into(),
                ));
            }
            report::sample_dump(&config)
        }
        Command::PanelsVsUnion => {
            json_only("panels-vs-union")?;
            report::panels_vs_union(&config)
        }
        Command::Suprate => {
            json_only("suprate")?;
            report::suprate(&config)
        }
        Command::Lognormal => {
            json_only("lognormal")?;
            report::lognormal(&config)
        }
    }
}

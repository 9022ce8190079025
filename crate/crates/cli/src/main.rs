//! `hemsmeta`: context detection, training runs and comparison reports.

mod commands;
mod config;
mod plot;
mod report;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Bad command line or configuration; exits with code 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Parser)]
#[command(
    name = "hemsmeta",
    version,
    about = "Meta-learned multi-objective appliance scheduling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
pub struct DataArgs {
    /// Hourly CSV with day,hour,background_demand_kw,renewable_kw.
    #[arg(long, conflicts_with = "synth_spec")]
    pub dataset: Option<PathBuf>,
    /// Synthetic year as start_day:solar_scale:noise regimes joined by commas.
    #[arg(long)]
    pub synth_spec: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic hourly dataset.
    Synth {
        #[arg(long)]
        synth_spec: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect context shifts in the renewable series.
    Detect {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate one method over one or more seeds.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        method: Option<String>,
        /// Comma-separated seeds.
        #[arg(long)]
        seed: Option<String>,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare finished run directories.
    Report {
        /// Method the improvement table is relative to; defaults to the first run.
        #[arg(long)]
        baseline: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true, num_args = 2..)]
        runs: Vec<PathBuf>,
    },
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth { synth_spec, seed, out } => commands::synth(&synth_spec, seed, &out),
        Command::Detect {
            config,
            data,
            seed,
            out,
        } => commands::detect(config.as_deref(), &data, seed, &out),
        Command::Run {
            config,
            method,
            seed,
            data,
            out,
        } => commands::run(config.as_deref(), method.as_deref(), seed.as_deref(), &data, &out),
        Command::Report { baseline, out, runs } => report::report(&runs, baseline.as_deref(), &out),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use hemsmeta_core::Error as E;
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Input(_) => 2,
                E::Schema { .. } | E::Parse { .. } | E::Data(_) | E::Io { .. } => 3,
                E::Numeric(_) | E::Shape { .. } | E::Domain(_) => 4,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<csv::Error>() {
            return 3;
        }
    }
    3
}

/// The error chain joined by `: `, skipping causes already quoted by their parent.
fn message(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", message(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_kind() {
        let usage: anyhow::Error = Usage("x".into()).into();
        assert_eq!(exit_code(&usage), 2);
        let data: anyhow::Error = hemsmeta_core::Error::Data("x".into()).into();
        assert_eq!(exit_code(&data.context("reading")), 3);
        let num: anyhow::Error = hemsmeta_core::Error::Numeric("nan".into()).into();
        assert_eq!(exit_code(&num), 4);
    }

    #[test]
    fn cli_shape_is_valid() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}

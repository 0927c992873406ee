//! `hpverify`: run the group problem-solving experiments and write reports.

mod commands;
mod config;
mod error;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::report::{Provenance, ReportBundle};

#[derive(Debug, Parser)]
#[command(name = "hpverify", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat TOML file with the same keys as the flags; flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    options: ExperimentConfig,
}

#[derive(Debug, Clone, Subcommand)]
enum Command {
    /// Evaluate every assumption and report witnesses for failures.
    Check,
    /// Trace in-series deliberation from each start state.
    Deliberate,
    /// Expected values of each agent and of the group under each policy.
    ExpectedValue,
    /// Random clone groups against clones of the best agent.
    HpExperiment,
    /// Exact and sampled values of the ability and diversity groups.
    AtdExperiment,
    /// Decompose crowd prediction error.
    Predict,
    /// Search for counterexamples with one assumption dropped.
    Fuzz,
    /// Recompute a built-in fixture's facts and compare with its golden file.
    Reproduce {
        /// Fixture name; `--fixture` works too.
        name: Option<String>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Check => "check",
            Command::Deliberate => "deliberate",
            Command::ExpectedValue => "expected-value",
            Command::HpExperiment => "hp-experiment",
            Command::AtdExperiment => "atd-experiment",
            Command::Predict => "predict",
            Command::Fuzz => "fuzz",
            Command::Reproduce { .. } => "reproduce",
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    }
    .overlay(cli.options);
    if let Command::Reproduce { name: Some(name) } = &cli.command {
        config.fixture = Some(name.clone());
        config.instance = None;
    }
    let bundle: ReportBundle = match &cli.command {
        Command::Check => commands::check(&config)?,
        Command::Deliberate => commands::deliberate(&config)?,
        Command::ExpectedValue => commands::expected_value(&config)?,
        Command::HpExperiment => commands::hp(&config)?,
        Command::AtdExperiment => commands::atd(&config)?,
        Command::Predict => commands::predict(&config)?,
        Command::Fuzz => commands::fuzz(&config)?,
        Command::Reproduce { .. } => commands::reproduce(&config)?,
    };
    let provenance = Provenance::new(cli.command.name(), &config);
    print!("{}", bundle.render(&provenance));
    if let Some(dir) = &config.out {
        for path in bundle.write(dir, &config, &provenance)? {
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hpverify: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

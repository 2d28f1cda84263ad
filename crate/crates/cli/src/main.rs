//! `degradation`: fit, compare and simulate Markov chain pipe-degradation models.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use degradation_core::hazards::HazardFamily;

use config::{parse_families, Overrides, RunConfig};
use error::CliError;

#[derive(Parser)]
#[command(name = "degradation", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated, e.g. `exponential,gompertz`.
    #[arg(long)]
    families: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(self) -> Result<RunConfig, CliError> {
        RunConfig::load(
            self.config.as_deref(),
            Overrides {
                input: self.input,
                seed: self.seed,
                families: self.families.as_deref().map(parse_families).transpose().map_err(CliError::config)?,
                out: self.out,
            },
        )
    }
}

#[derive(Subcommand)]
enum Command {
    /// Split, fit every family, score against the Turnbull baselines and export.
    Fit(Common),
    /// Turnbull threshold curves and state probabilities of the input cohort.
    Turnbull(Common),
    /// P(t, τ) on a yearly τ grid from a parameter file.
    TransitionMatrix {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        params: PathBuf,
        /// Checked against the family stored in the parameter file.
        #[arg(long)]
        family: Option<HazardFamily>,
        /// Anchor ages; repeat for several.
        #[arg(long = "t", default_value = "0")]
        anchors: Vec<f64>,
        #[arg(long, default_value_t = 30.0)]
        tau_max: f64,
        /// Defaults to `<out>/transition_matrix.csv`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Synthetic cross-sectional cohort from a parameter file.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        n_pipes: usize,
        /// Defaults to `<out>/cohort.csv`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write `train.csv` and `test.csv` by pipe.
    Split(Common),
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit(common) => commands::cmd_fit(&common.load()?).map(drop),
        Command::Turnbull(common) => commands::cmd_turnbull(&common.load()?),
        Command::TransitionMatrix {
            common,
            params,
            family,
            anchors,
            tau_max,
            output,
        } => {
            let config = common.load()?;
            let output = output.unwrap_or_else(|| config.out.join("transition_matrix.csv"));
            commands::cmd_transition_matrix(&params, family, &anchors, tau_max, &output)
        }
        Command::Simulate {
            common,
            params,
            n_pipes,
            output,
        } => {
            let config = common.load()?;
            let output = output.unwrap_or_else(|| config.out.join("cohort.csv"));
            commands::cmd_simulate(&config, &params, n_pipes, &output)
        }
        Command::Split(common) => commands::cmd_split(&common.load()?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code as u8)
        }
    }
}

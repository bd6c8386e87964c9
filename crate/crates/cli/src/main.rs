use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod output;
mod recipes;

/// Griffiths-McCoy singularity toolkit: path-integral Monte Carlo on diluted
/// Chimera graphs, a simulated annealer, and the scaling analysis on top.
#[derive(Parser, Debug)]
#[command(name = "griffiths", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Continue an interrupted run from its checkpoints.
    #[arg(long, global = true)]
    pub resume: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write the disorder instances.
    Generate,
    /// Run the QMC grid or the annealer simulation.
    Run,
    /// Calibrate the flux-bias corrections of every simulated device.
    Calibrate,
    /// Run one analysis recipe, or every recipe listed in the configuration.
    Analyze {
        recipe: Option<String>,
        /// List the available recipes and exit.
        #[arg(long)]
        list: bool,
    },
    /// Run the acceptance battery.
    Verify {
        #[arg(value_enum, default_value_t = Level::Quick)]
        level: Level,
    },
    /// Summarize the run in the output directory.
    Report,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Level {
    Quick,
    Full,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

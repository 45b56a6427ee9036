//! Command-line front end: runs simulations, ensembles and certificates
//! described by TOML experiment files and reproduces the reference figures.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{Figure, OutputDir, Overrides};
pub use config::LoadedConfig;
pub use error::CliError;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "ERGOLOOP_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "ergoloop",
    version,
    about = "Ergodicity of feedback loops over stochastic agents"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one realisation and write its trace.
    Simulate(ConfigArgs),
    /// Run an ensemble from every initial condition and write statistics.
    Ensemble(ConfigArgs),
    /// Run the requested certificates and write their documents.
    Certify(ConfigArgs),
    /// Regenerate the data behind a reference figure from the bundled configs.
    Reproduce {
        figure: Figure,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Experiment file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Master seed, overriding the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub realizations: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
}

impl From<&RunArgs> for Overrides {
    fn from(a: &RunArgs) -> Self {
        Overrides {
            seed: a.seed,
            realizations: a.realizations,
            horizon: a.horizon,
            out: a.out.clone(),
        }
    }
}

/// Installs a global pool of `ERGOLOOP_THREADS` workers when the variable
/// is set.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            CliError::Config(format!("{THREADS_ENV}={value:?} is not a positive integer"))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

pub fn run(cli: &Cli) -> Result<OutputDir, CliError> {
    configure_threads()?;
    match &cli.command {
        Command::Simulate(a) => {
            commands::simulate(&LoadedConfig::from_path(&a.config)?, &(&a.run).into())
        }
        Command::Ensemble(a) => {
            commands::ensemble_cmd(&LoadedConfig::from_path(&a.config)?, &(&a.run).into())
        }
        Command::Certify(a) => {
            commands::certify(&LoadedConfig::from_path(&a.config)?, &(&a.run).into())
        }
        Command::Reproduce { figure, run } => commands::reproduce(*figure, &run.into()),
    }
}

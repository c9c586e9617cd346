mod commands;
mod manifest;
mod setup;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "walkfield", version, about = "Random-walk spatial models: build, simulate, check, fit")]
struct Cli {
    /// Flat key = value run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every stochastic step; overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Only report errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the rate generator from a graph and write it with the node index.
    Build,
    /// Classify identifiability of the generator, optionally searching for confounders.
    CheckIdent,
    /// Draw realizations of the intrinsic field.
    SimulateField,
    /// Simulate the birth-death-migration process and its limiting ODE.
    SimulatePopulation,
    /// Median distance between scaled simulations and the ODE across population sizes.
    Convergence,
    /// Run an MCMC fit.
    Fit,
    /// Deviance information criterion for one or more fit directories.
    Dic {
        #[arg(required = true)]
        fits: Vec<PathBuf>,
    },
    /// Split-half convergence report for one or more fit directories.
    Diagnose {
        #[arg(required = true)]
        fits: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { log::LevelFilter::Error } else { log::LevelFilter::Info };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();

    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("walkfield: error: {msg}");
            ExitCode::from(e.class().exit_code() as u8)
        }
    }
}

//! `efl` — experiment runner: validate declarative configs, execute seeded
//! runs, and summarize metrics artifacts.

mod overrides;
mod report;
mod runner;

use anyhow::Result;
use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "efl", version, about = "Federated-learning simulation runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute every seed of an experiment config and write metrics files
    /// plus a manifest into the configured output directory.
    Run {
        /// Path to the experiment config (TOML).
        config: PathBuf,
        /// Override config fields, e.g. --set hyper.lambda=0.1
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Root directory for relative dataset paths
        /// (default: $EFL_DATA_ROOT).
        #[arg(long)]
        data_root: Option<PathBuf>,
        /// Force the sequential client phase.
        #[arg(long)]
        sequential: bool,
    },
    /// Summarize the metrics files of a finished run directory.
    Report {
        dir: PathBuf,
        /// Emit machine-readable JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Parse and validate a config without running it.
    Validate {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        data_root: Option<PathBuf>,
    },
}

fn data_root_or_env(flag: Option<PathBuf>) -> Option<PathBuf> {
    flag.or_else(|| std::env::var_os("EFL_DATA_ROOT").map(PathBuf::from))
}

fn main() {
    let cli = Cli::parse();
    let result: Result<()> = match cli.command {
        Command::Run {
            config,
            set,
            data_root,
            sequential,
        } => runner::cmd_run(&config, &set, data_root_or_env(data_root).as_deref(), sequential),
        Command::Report { dir, json } => report::cmd_report(&dir, json),
        Command::Validate {
            config,
            set,
            data_root,
        } => runner::cmd_validate(&config, &set, data_root_or_env(data_root).as_deref()),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

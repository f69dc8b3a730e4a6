//! Command-line entry points and the HTTP service of `bandit-lens`.

pub mod service;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, Parser)]
#[command(
    name = "bandit-lens",
    version,
    about = "Value-gain dashboards for contextual bandits"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a preset experiment configuration.
    Init {
        #[arg(long, value_enum, default_value_t = Preset::Desk)]
        preset: Preset,
        /// Config file to write (`.json` for JSON, otherwise TOML).
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the configured logging policy in the simulated environment and
    /// write `logs.jsonl` and `snapshot.json`.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        rounds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the dashboard payload from a log and a policy snapshot.
    Report {
        #[command(flatten)]
        inputs: InputArgs,
        /// Payload file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the dashboard and what-if queries over HTTP.
    Serve {
        #[command(flatten)]
        inputs: InputArgs,
        #[arg(long, env = "BANDIT_LENS_PORT", default_value_t = DEFAULT_PORT)]
        port: u16,
        /// Bind address.
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Origin allowed by CORS; any origin when omitted.
        #[arg(long)]
        cors_origin: Option<String>,
        /// Also write the served payload to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct InputArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Log file (one JSON record per line).
    #[arg(long)]
    pub logs: PathBuf,
    /// Policy snapshot written by `simulate` or by the production system.
    #[arg(long)]
    pub snapshot: PathBuf,
    /// Overrides the snapshot's Monte Carlo seed (Thompson propensities).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Two categorical fields, four price points, epsilon-greedy logging.
    Desk,
    /// The desk experiment logged by Thompson sampling.
    DeskThompson,
}

//! `delvepo` command-line driver: pool generation, optimization runs,
//! held-out evaluation and reporting.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

mod eval;
mod files;
mod init;
mod report;
mod run;
mod setup;

pub use files::{BestPromptFile, SeedReport, Summary, TestResult};

#[derive(Debug, Parser)]
#[command(name = "delvepo", version, about = "Memory-guided evolutionary prompt optimization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long, short)]
    pub config: PathBuf,
    /// Override a config key, e.g. `--set evolution.epochs=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Answer every model call offline with a deterministic mock.
    #[arg(long)]
    pub mock: bool,
    /// Output directory; defaults to `run.out` from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate candidate-value pools for every component type.
    Init {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        values_per_type: Option<usize>,
        /// Seed for the mock backend; defaults to the first run seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the optimizer once per seed.
    Run(RunArgs),
    /// Continue interrupted runs from their checkpoints.
    Resume(RunArgs),
    /// Score a prompt on the held-out test split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Best-prompt file from `run`, or a text file with tagged components.
        #[arg(long)]
        prompt: PathBuf,
        /// Split seed; defaults to the seed recorded in the prompt file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Curves, cost tables and ablation comparisons for finished runs.
    Report {
        /// Run directory, or a directory holding two run directories.
        dir: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
    /// Seeds to run, e.g. `--seed 5,10,15`; defaults to `run.seeds`.
    #[arg(long, value_delimiter = ',')]
    pub seed: Vec<u64>,
    /// Stop each seed after this many iterations (testing aid).
    #[arg(long, hide = true)]
    pub stop_after: Option<usize>,
}

pub fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Init { common, values_per_type, seed } => init::run(&common, values_per_type, seed),
        Command::Run(args) => run::run(&args, false),
        Command::Resume(args) => run::run(&args, true),
        Command::Eval { common, prompt, seed } => eval::run(&common, &prompt, seed),
        Command::Report { dir } => report::run(&dir),
    }
}

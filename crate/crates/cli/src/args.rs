use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::runner::RunOptions;
use crate::spec::Precision;

#[derive(Debug, Parser)]
#[command(
    name = "normshare",
    version,
    about = "Multi-task historical spelling normalization experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Experiment spec (TOML).
    #[arg(long, global = true)]
    pub spec: Option<PathBuf>,

    /// Output directory; overrides `out` in the spec.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Comma-separated seeds; overrides the spec's seed list.
    #[arg(long, global = true, value_delimiter = ',')]
    pub seed: Option<Vec<u64>>,

    /// Parallel training cells.
    #[arg(long, global = true, env = "NORMSHARE_WORKERS")]
    pub workers: Option<usize>,

    #[arg(long, global = true, value_enum)]
    pub precision: Option<Precision>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train and evaluate one cell.
    Train,
    /// Train every sharing configuration with a fixed auxiliary set.
    SweepSharing,
    /// Accuracy against training size for several configurations.
    LearningCurve,
    /// Normalize a language without any of its normalization data.
    ZeroShot,
    /// Decode a pair file with a saved checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Task name or index inside the checkpoint; defaults to the first.
        #[arg(long)]
        task: Option<String>,
    },
    /// Correlations and split curves from finished runs.
    Analyze {
        #[arg(long)]
        results: PathBuf,
    },
    /// Write a synthetic corpus and a matching spec.
    GenSynthetic,
}

impl Cli {
    pub fn options(&self) -> RunOptions {
        RunOptions {
            out: self.out.clone(),
            seeds: self.seed.clone(),
            workers: self.workers,
            precision: self.precision,
        }
    }
}

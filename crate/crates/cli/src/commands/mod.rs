//! One module per subcommand.

mod analyze;
mod curve;
mod evaluate;
mod probe;
mod summary;
mod sweep;
mod synthetic;
mod train;
mod zero_shot;

use std::path::Path;

use crate::args::{Cli, Command};
use crate::error::{CliError, Result};
use crate::spec::ExperimentSpec;

pub use analyze::analyze;
pub use curve::{learning_curve, DEFAULT_SIZES};
pub use evaluate::evaluate;
pub use probe::run_probes;
pub use summary::{quantile, rank_configs, ConfigRank};
pub use sweep::sweep_sharing;
pub use synthetic::gen_synthetic;
pub use train::train;
pub use zero_shot::{zero_shot, ZeroShotRow};

fn load_spec(path: Option<&Path>) -> Result<ExperimentSpec> {
    let path = path.ok_or_else(|| CliError::spec("--spec is required for this command"))?;
    ExperimentSpec::load(path)
}

/// Runs the parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    let opts = cli.options();
    let spec = || load_spec(cli.spec.as_deref());
    match &cli.command {
        Command::Train => train(spec()?, &opts).map(drop),
        Command::SweepSharing => sweep_sharing(spec()?, &opts).map(drop),
        Command::LearningCurve => learning_curve(spec()?, &opts),
        Command::ZeroShot => zero_shot(spec()?, &opts).map(drop),
        Command::Evaluate {
            checkpoint,
            input,
            task,
        } => evaluate(checkpoint, input, task.as_deref(), &opts).map(drop),
        Command::Analyze { results } => analyze(results, opts.out.as_deref()),
        Command::GenSynthetic => gen_synthetic(spec()?, &opts).map(drop),
    }
}

/// Parses `args` (program name first) and runs them.
pub fn run_args<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    use clap::Parser;
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::spec(e.to_string()))?;
    run(&cli)
}

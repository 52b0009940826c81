use std::sync::Mutex;

use log::info;

use crate::error::{CliError, Result};
use crate::results::ResultRow;
use crate::runner::{resolve_sizes, run_cell, Cell, Context, RunOptions, Sink};
use crate::spec::{ExperimentSpec, Needs, Size};

/// Trains exactly one cell and writes its artifacts directly into the
/// output directory.
pub fn train(mut spec: ExperimentSpec, opts: &RunOptions) -> Result<ResultRow> {
    let mut problems = Vec::new();
    if spec.datasets.len() != 1 {
        problems.push(format!(
            "train needs exactly one [[dataset]], found {}",
            spec.datasets.len()
        ));
    }
    let configs = spec.configs()?.unwrap_or_default();
    if configs.len() != 1 {
        problems.push(format!(
            "train needs exactly one config, found {}",
            configs.len()
        ));
    }
    let sizes = spec
        .experiment
        .sizes
        .clone()
        .unwrap_or_else(|| vec![Size::Full]);
    if sizes.len() != 1 {
        problems.push(format!(
            "train needs exactly one size, found {}",
            sizes.len()
        ));
    }
    let seeds = opts.seeds.clone().unwrap_or_else(|| spec.seeds());
    if seeds.len() != 1 {
        problems.push(format!(
            "train needs exactly one seed, found {}",
            seeds.len()
        ));
    }
    // a single-task run without an explicit aux set trains on nothing else
    if configs.first().is_some_and(|c| c.is_empty()) && spec.experiment.aux_sets.is_none() {
        spec.experiment.aux_sets = Some(vec![Vec::new()]);
    }
    let aux_sets = spec.aux_sets();
    if aux_sets.len() != 1 {
        problems.push(format!(
            "train needs exactly one aux set, found {}",
            aux_sets.len()
        ));
    }
    if !problems.is_empty() {
        return Err(CliError::Spec(problems));
    }

    let ctx = Context::load(
        spec,
        opts,
        Needs {
            datasets: true,
            aux: true,
        },
    )?;
    let data = &ctx.datasets[0];
    let size = resolve_sizes(&sizes, data.train.len(), &data.name)[0];
    let cell = Cell {
        dataset: 0,
        config: configs[0],
        aux: aux_sets[0].clone(),
        size,
        seed: seeds[0],
    };
    ctx.create_out_dir()?;
    let sink = Mutex::new(Sink::open(&ctx.out)?);
    let key = cell.key(&ctx);
    if let Some(row) = sink
        .lock()
        .expect("result sink poisoned")
        .results()
        .get(&key)
    {
        info!("{key:?} already has a result in {}", ctx.out.display());
        return Ok(row.clone());
    }
    let out = run_cell(&ctx, &cell, &ctx.out, true)?;
    let row = sink
        .lock()
        .expect("result sink poisoned")
        .record(&ctx, &cell, &out)?;
    println!(
        "{} config {:?} aux {} size {} seed {}: accuracy {:.2}, identity {:.2}",
        row.dataset, row.config, row.aux, row.size, row.seed, row.accuracy, row.identity
    );
    Ok(row)
}

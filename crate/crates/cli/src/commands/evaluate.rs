use std::fs;
use std::path::Path;

use normshare::data::load_pairs;
use normshare::evalkit::{predict, write_predictions, EvalReport};
use normshare::model::{load_checkpoint, MultiTaskModel};
use numcore::Real;

use crate::error::{io_error, CliError, Result};
use crate::runner::RunOptions;
use crate::spec::Precision;

/// Decodes `input` with one task of a saved model and reports accuracy.
/// With `--out`, the report and predictions are written there.
pub fn evaluate(
    checkpoint: &Path,
    input: &Path,
    task: Option<&str>,
    opts: &RunOptions,
) -> Result<EvalReport> {
    let mut missing = Vec::new();
    for p in [checkpoint, input] {
        if !p.is_file() {
            missing.push(format!("{} does not exist", p.display()));
        }
    }
    if !missing.is_empty() {
        return Err(CliError::Spec(missing));
    }
    match opts.precision.unwrap_or_default() {
        Precision::F32 => evaluate_as(load_checkpoint::<f32>(checkpoint)?, input, task, opts),
        Precision::F64 => evaluate_as(load_checkpoint::<f64>(checkpoint)?, input, task, opts),
    }
}

fn evaluate_as<F: Real>(
    model: MultiTaskModel<F>,
    input: &Path,
    task: Option<&str>,
    opts: &RunOptions,
) -> Result<EvalReport> {
    let index = match task {
        None => 0,
        Some(t) => model
            .task_index(t)
            .or_else(|| t.parse::<usize>().ok().filter(|&i| i < model.tasks.len()))
            .ok_or_else(|| {
                let names: Vec<&str> = model.tasks.iter().map(|t| t.name.as_str()).collect();
                CliError::spec(format!("checkpoint has no task {t:?}; tasks are {names:?}"))
            })?,
    };
    let spec = &model.tasks[index];
    let data = load_pairs(input, spec.kind, &spec.language)?;
    let preds = predict(&model, index, &data.pairs)?;
    let report = EvalReport::from_predictions(data.name.clone(), preds)?;
    println!(
        "{}: {} tokens, accuracy {:.2}, identity {:.2}",
        report.dataset, report.n, report.accuracy, report.identity_accuracy
    );
    if let Some(out) = &opts.out {
        fs::create_dir_all(out).map_err(io_error(out))?;
        report.write_json(out.join("eval_report.json"))?;
        if let Some(preds) = &report.predictions {
            write_predictions(out.join("predictions.tsv"), preds)?;
        }
    }
    Ok(report)
}

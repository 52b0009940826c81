use std::collections::BTreeSet;
use std::sync::Mutex;

use log::info;
use normshare::data::TaskKind;
use normshare::evalkit::{identity_baseline, predict, score, ProbeMetric};
use normshare::model::SharingConfig;
use normshare::training::{train, TrainPlan};
use numcore::Real;
use rayon::prelude::*;

use crate::error::Result;
use crate::results::{ProbeRow, Table};
use crate::runner::Context;
use crate::spec::Precision;

/// Trains a single-task model on each auxiliary dataset named in the
/// spec's `[probe]` section and scores it as a normalizer on the dev file of
/// every dataset in the same language. Rows go to `probe.csv`.
pub fn run_probes(ctx: &Context) -> Result<Vec<ProbeRow>> {
    let Some(probe) = &ctx.spec.probe else {
        return Ok(Vec::new());
    };
    let metric = probe.metric;
    let table = Mutex::new(Table::<ProbeRow>::open(ctx.out.join("probe.csv"))?);
    let languages: BTreeSet<String> = ctx
        .datasets
        .iter()
        .map(|d| d.language.to_lowercase())
        .collect();

    let mut jobs = Vec::new();
    for lang in &languages {
        for &task in &probe.tasks {
            for seed in ctx.spec.seeds() {
                let missing = {
                    let t = table.lock().expect("probe table poisoned");
                    ctx.datasets
                        .iter()
                        .filter(|d| d.language.eq_ignore_ascii_case(lang))
                        .any(|d| !t.contains(&key(&d.name, task, seed, metric)))
                };
                if missing {
                    jobs.push((lang.clone(), task, seed));
                }
            }
        }
    }
    ctx.pool()?.install(|| {
        jobs.par_iter()
            .try_for_each(|(lang, task, seed)| -> Result<()> {
                let rows = match ctx.precision() {
                    Precision::F32 => probe_job::<f32>(ctx, lang, *task, *seed, metric)?,
                    Precision::F64 => probe_job::<f64>(ctx, lang, *task, *seed, metric)?,
                };
                let mut t = table.lock().expect("probe table poisoned");
                for row in rows {
                    if !t.contains(&key(&row.dataset, *task, *seed, metric)) {
                        info!(
                            "probe {} on {} seed {}: {:.2} (identity {:.2})",
                            row.task, row.dataset, row.seed, row.score, row.identity
                        );
                        t.insert(row)?;
                    }
                }
                Ok(())
            })
    })?;
    Ok(table
        .into_inner()
        .expect("probe table poisoned")
        .rows()
        .to_vec())
}

fn key(
    dataset: &str,
    task: TaskKind,
    seed: u64,
    metric: ProbeMetric,
) -> (String, String, u64, String) {
    (
        dataset.to_owned(),
        task.short().to_owned(),
        seed,
        metric_name(metric).to_owned(),
    )
}

fn metric_name(metric: ProbeMetric) -> &'static str {
    match metric {
        ProbeMetric::Accuracy => "accuracy",
        ProbeMetric::Lcs => "lcs",
        ProbeMetric::Levenshtein => "levenshtein",
    }
}

fn probe_job<F: Real>(
    ctx: &Context,
    lang: &str,
    task: TaskKind,
    seed: u64,
    metric: ProbeMetric,
) -> Result<Vec<ProbeRow>> {
    let aux = ctx.aux_for(lang, &[task])?.remove(0);
    let mut plan = TrainPlan::new(
        &aux,
        Vec::new(),
        SharingConfig::none(),
        ctx.spec.hyper,
        seed,
    )?;
    plan.max_epochs = ctx.spec.experiment.max_epochs;
    plan.patience = ctx.spec.experiment.patience;
    let model = train::<F>(&plan)?.model;
    ctx.datasets
        .iter()
        .filter(|d| d.language.eq_ignore_ascii_case(lang))
        .map(|d| {
            let preds = predict(&model, 0, &d.dev.pairs)?;
            Ok(ProbeRow {
                dataset: d.name.clone(),
                task: task.short().to_owned(),
                seed,
                metric: metric_name(metric).to_owned(),
                score: score(&preds, metric)?,
                identity: identity_baseline(&d.dev),
            })
        })
        .collect()
}

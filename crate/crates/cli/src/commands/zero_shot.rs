use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;

use log::info;
use normshare::data::{truncate, TaskDataset, TaskKind};
use normshare::evalkit::{micro_average, write_predictions, EvalReport};
use normshare::training::{train_zero_shot, ZeroShotOutcome, ZeroShotPlan};
use numcore::Real;
use serde::{Deserialize, Serialize};

use super::sweep::write_csv;
use crate::error::{io_error, CliError, Result};
use crate::results::{Keyed, Table};
use crate::runner::{Context, RunOptions};
use crate::spec::{ExperimentSpec, Needs, Precision};

/// Identity baseline and zero-shot accuracy on one target dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotRow {
    pub target: String,
    pub dataset: String,
    pub seed: u64,
    pub n: usize,
    pub identity: f64,
    pub zero_shot: f64,
}

impl Keyed for ZeroShotRow {
    type Key = (String, String, u64);
    fn key(&self) -> Self::Key {
        (self.target.clone(), self.dataset.clone(), self.seed)
    }
}

#[derive(Debug, Clone, Serialize)]
struct SummaryRow {
    dataset: String,
    seed: u64,
    n: usize,
    identity: f64,
    zero_shot: f64,
}

/// Trains one fully shared tagged model per target language and seed,
/// never showing it that language's normalization data, and scores it on
/// the target's dev files.
pub fn zero_shot(spec: ExperimentSpec, opts: &RunOptions) -> Result<Vec<ZeroShotRow>> {
    let ctx = Context::load(
        spec,
        opts,
        Needs {
            datasets: true,
            aux: false,
        },
    )?;
    let zs = ctx.spec.zero_shot.clone();
    let languages: BTreeSet<String> = ctx
        .datasets
        .iter()
        .map(|d| d.language.to_lowercase())
        .collect();
    let mut problems = Vec::new();
    if languages.len() < 2 {
        problems.push(format!(
            "zero-shot needs normalization data in at least 2 languages, found {}",
            languages.len()
        ));
    }
    let targets: Vec<String> = zs
        .targets
        .clone()
        .unwrap_or_else(|| languages.iter().cloned().collect())
        .into_iter()
        .map(|t| t.to_lowercase())
        .collect();
    for t in &targets {
        if !languages.contains(t) {
            problems.push(format!("target language {t} has no [[dataset]]"));
        }
        if !ctx.aux.iter().any(|a| a.language.eq_ignore_ascii_case(t)) {
            problems.push(format!("target language {t} has no auxiliary data"));
        }
    }
    if zs.epochs == 0
        || zs.samples_per_epoch == 0
        || zs.samples_per_update == 0
        || zs.train_tokens == 0
    {
        problems.push("zero-shot epochs, sample counts and train_tokens must be positive".into());
    }
    if !problems.is_empty() {
        return Err(CliError::Spec(problems));
    }

    ctx.create_out_dir()?;
    let mut table = Table::<ZeroShotRow>::open(ctx.out.join("zero_shot.csv"))?;
    for target in &targets {
        for seed in ctx.spec.seeds() {
            let names: Vec<&str> = ctx
                .datasets
                .iter()
                .filter(|d| d.language.eq_ignore_ascii_case(target))
                .map(|d| d.name.as_str())
                .collect();
            if names
                .iter()
                .all(|n| table.contains(&(target.clone(), (*n).to_owned(), seed)))
            {
                info!("zero-shot {target} seed {seed} already has results");
                continue;
            }
            let rows = match ctx.precision() {
                Precision::F32 => run_target::<f32>(&ctx, target, seed)?,
                Precision::F64 => run_target::<f64>(&ctx, target, seed)?,
            };
            for row in rows {
                if !table.contains(&row.key()) {
                    table.insert(row)?;
                }
            }
        }
    }

    let mut summary = Vec::new();
    let mut text = String::from("dataset  seed  n  identity  zero-shot\n");
    for seed in ctx.spec.seeds() {
        let rows: Vec<&ZeroShotRow> = table
            .rows()
            .iter()
            .filter(|r| r.seed == seed && targets.contains(&r.target))
            .collect();
        if rows.is_empty() {
            continue;
        }
        for r in &rows {
            summary.push(SummaryRow {
                dataset: r.dataset.clone(),
                seed,
                n: r.n,
                identity: r.identity,
                zero_shot: r.zero_shot,
            });
        }
        let reports = |f: fn(&ZeroShotRow) -> f64| -> Vec<EvalReport> {
            rows.iter()
                .map(|r| EvalReport::new(r.dataset.clone(), r.n, f(r), r.identity))
                .collect()
        };
        summary.push(SummaryRow {
            dataset: "Micro-Avg".into(),
            seed,
            n: rows.iter().map(|r| r.n).sum(),
            identity: micro_average(&reports(|r| r.identity))?,
            zero_shot: micro_average(&reports(|r| r.zero_shot))?,
        });
    }
    for s in &summary {
        let _ = writeln!(
            text,
            "{}  {}  {}  {:.2}  {:.2}",
            s.dataset, s.seed, s.n, s.identity, s.zero_shot
        );
    }
    write_csv(&ctx.out.join("zero_shot_table.csv"), &summary)?;
    print!("{text}");
    Ok(table.rows().to_vec())
}

/// The inventory seen by a model for `target`: other languages'
/// normalization data cut to `train_tokens`, the target's normalization
/// datasets carrying their dev pairs for evaluation, and every auxiliary set.
fn inventory(ctx: &Context, target: &str) -> Vec<TaskDataset> {
    let n = ctx.spec.zero_shot.train_tokens;
    ctx.datasets
        .iter()
        .map(|d| {
            if d.language.eq_ignore_ascii_case(target) {
                d.train.with_pairs(d.dev.pairs.clone())
            } else {
                truncate(&d.train, n)
            }
        })
        .chain(ctx.aux.iter().cloned())
        .collect()
}

fn run_target<F: Real>(ctx: &Context, target: &str, seed: u64) -> Result<Vec<ZeroShotRow>> {
    let zs = &ctx.spec.zero_shot;
    let mut plan = ZeroShotPlan::new(inventory(ctx, target), target, ctx.spec.hyper, seed);
    plan.epochs = zs.epochs;
    plan.samples_per_epoch = zs.samples_per_epoch;
    plan.samples_per_update = zs.samples_per_update;
    plan.force_include = zs.force_include.clone();
    let outcome: ZeroShotOutcome<F> = train_zero_shot(&plan, |r| {
        info!(
            "zero-shot {target} seed {seed} epoch {}: loss {:.4}",
            r.epoch, r.train_loss
        );
    })?;

    let dir = ctx.out.join("zero_shot").join(format!("{target}__s{seed}"));
    fs::create_dir_all(&dir).map_err(io_error(&dir))?;
    outcome.log.write_jsonl(dir.join("train_log.jsonl"))?;
    println!(
        "target {target} seed {seed}: normalization tokens (target lang): {}",
        outcome.log.tokens_seen(TaskKind::Normalization, target)
    );

    let reports = outcome.evaluate_targets()?;
    reports
        .into_iter()
        .map(|r| {
            if let Some(preds) = &r.predictions {
                write_predictions(dir.join(format!("{}.predictions.tsv", r.dataset)), preds)?;
            }
            r.write_json(dir.join(format!("{}.eval_report.json", r.dataset)))?;
            Ok(ZeroShotRow {
                target: target.to_owned(),
                dataset: r.dataset,
                seed,
                n: r.n,
                identity: r.identity_accuracy,
                zero_shot: r.accuracy,
            })
        })
        .collect()
}

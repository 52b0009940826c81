use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::sync::Mutex;

use normshare::model::SharingConfig;
use serde::Serialize;

use super::summary::{quantile, rank_configs, ConfigRank};
use crate::error::{csv_error, CliError, Result};
use crate::results::{cmp_f64, write_atomic, ResultRow};
use crate::runner::{resolve_sizes, run_grid, Cell, Context, RunOptions, Sink};
use crate::spec::{ExperimentSpec, Needs, Size};

#[derive(Debug, Clone, Serialize)]
struct BucketRow {
    shared: usize,
    configs: usize,
    min: f64,
    q1: f64,
    median: f64,
    q3: f64,
    max: f64,
}

/// Trains every sharing configuration (all 64 by default) with one
/// auxiliary set. The empty configuration is trained without auxiliary
/// data and serves as the reference for error reductions.
pub fn sweep_sharing(spec: ExperimentSpec, opts: &RunOptions) -> Result<Vec<ConfigRank>> {
    let aux_sets = spec.aux_sets();
    if aux_sets.len() != 1 {
        return Err(CliError::spec(format!(
            "sweep-sharing needs exactly one aux set, found {}",
            aux_sets.len()
        )));
    }
    let mut configs = spec.configs()?.unwrap_or_else(SharingConfig::enumerate);
    if !configs.contains(&SharingConfig::none()) {
        configs.insert(0, SharingConfig::none());
    }
    let ctx = Context::load(
        spec,
        opts,
        Needs {
            datasets: true,
            aux: true,
        },
    )?;
    let sizes = ctx
        .spec
        .experiment
        .sizes
        .clone()
        .unwrap_or_else(|| vec![Size::Full]);

    let mut cells = Vec::new();
    for (i, d) in ctx.datasets.iter().enumerate() {
        for size in resolve_sizes(&sizes, d.train.len(), &d.name) {
            for &seed in &ctx.spec.seeds() {
                for &config in &configs {
                    let aux = if config.is_empty() {
                        Vec::new()
                    } else {
                        aux_sets[0].clone()
                    };
                    cells.push(Cell {
                        dataset: i,
                        config,
                        aux,
                        size,
                        seed,
                    });
                }
            }
        }
    }
    ctx.create_out_dir()?;
    let sink = Mutex::new(Sink::open(&ctx.out)?);
    run_grid(&ctx, &cells, &sink)?;

    let sink = sink.into_inner().expect("result sink poisoned");
    let keys: BTreeSet<_> = cells.iter().map(|c| c.key(&ctx)).collect();
    let rows: Vec<ResultRow> = sink
        .results()
        .rows()
        .iter()
        .filter(|r| {
            keys.contains(&(
                r.dataset.clone(),
                r.config.clone(),
                r.aux.clone(),
                r.size,
                r.seed,
            ))
        })
        .cloned()
        .collect();
    let ranks = rank_configs(&rows);
    write_csv(&ctx.out.join("ranking.csv"), &ranks)?;

    let buckets: Vec<BucketRow> = (0..=6)
        .filter_map(|shared| {
            let mut accs: Vec<f64> = ranks
                .iter()
                .filter(|r| r.shared == shared)
                .map(|r| r.accuracy)
                .collect();
            if accs.is_empty() {
                return None;
            }
            accs.sort_by(|a, b| cmp_f64(*a, *b));
            Some(BucketRow {
                shared,
                configs: accs.len(),
                min: accs[0],
                q1: quantile(&accs, 0.25),
                median: quantile(&accs, 0.5),
                q3: quantile(&accs, 0.75),
                max: accs[accs.len() - 1],
            })
        })
        .collect();
    write_csv(&ctx.out.join("sharing_summary.csv"), &buckets)?;

    let mut text = String::from("rank  config  shared  accuracy  error_reduction\n");
    for r in ranks.iter().take(10) {
        let config = if r.config.is_empty() {
            "single"
        } else {
            &r.config
        };
        let er = r
            .error_reduction
            .map_or("-".to_owned(), |e| format!("{e:.2}"));
        let _ = writeln!(
            text,
            "{:>4}  {config:<6}  {:>6}  {:>8.2}  {er:>15}",
            r.rank, r.shared, r.accuracy
        );
    }
    text.push_str("\nshared  configs  min  q1  median  q3  max\n");
    for b in &buckets {
        let _ = writeln!(
            text,
            "{}  {}  {:.2}  {:.2}  {:.2}  {:.2}  {:.2}",
            b.shared, b.configs, b.min, b.q1, b.median, b.q3, b.max
        );
    }
    print!("{text}");
    Ok(ranks)
}

pub(crate) fn write_csv<T: Serialize>(path: &std::path::Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_error(path))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Results {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    write_atomic(path, &bytes)
}

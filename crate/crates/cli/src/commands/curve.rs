use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use log::{info, warn};
use normshare::evalkit::{error_reduction, micro_average, EvalReport};
use normshare::model::SharingConfig;
use serde::Serialize;

use super::probe::run_probes;
use super::summary::rank_configs;
use super::sweep::write_csv;
use crate::error::{io_error, CliError, Result};
use crate::plot::{Chart, Series};
use crate::results::{load_rows, ResultRow};
use crate::runner::{resolve_sizes, run_grid, Cell, Context, RunOptions, Sink};
use crate::spec::{aux_label, ExperimentSpec, Needs, Size};

/// Sizes used when the spec lists none.
pub const DEFAULT_SIZES: [usize; 6] = [100, 500, 1000, 5000, 10000, 50000];

#[derive(Debug, Clone, Serialize)]
struct CurveRow {
    dataset: String,
    config: String,
    size: usize,
    seed: u64,
    accuracy: f64,
}

#[derive(Debug, Clone, Serialize)]
struct MicroRow {
    config: String,
    size: usize,
    datasets: usize,
    single: f64,
    accuracy: f64,
    error_reduction: Option<f64>,
}

/// Best non-empty configurations of an earlier sweep.
fn top_sweep_configs(path: &Path, n: usize) -> Result<Vec<SharingConfig>> {
    let file = if path.is_dir() {
        path.join("results.csv")
    } else {
        path.to_path_buf()
    };
    if !file.is_file() {
        return Err(CliError::spec(format!(
            "sweep results {} do not exist",
            file.display()
        )));
    }
    let rows: Vec<ResultRow> = load_rows(&file)?;
    let mtl: Vec<ResultRow> = rows.into_iter().filter(|r| !r.config.is_empty()).collect();
    let top: Vec<SharingConfig> = rank_configs(&mtl)
        .iter()
        .take(n)
        .map(|r| SharingConfig::parse(&r.config).map_err(|e| CliError::spec(e.to_string())))
        .collect::<Result<_>>()?;
    if top.is_empty() {
        return Err(CliError::spec(format!(
            "{} has no multi-task rows",
            file.display()
        )));
    }
    Ok(top)
}

/// Trains the single-task baseline and every configuration × aux set at a
/// range of training sizes, then writes `curve.csv`, one log-x chart per
/// dataset, and the micro-averaged error-reduction curve. Probes run too
/// when the spec has a `[probe]` section.
pub fn learning_curve(spec: ExperimentSpec, opts: &RunOptions) -> Result<()> {
    let configs = match (spec.configs()?, &spec.experiment.sweep_results) {
        (Some(cs), _) => cs,
        (None, Some(path)) => {
            let top = top_sweep_configs(path, 3)?;
            info!(
                "configurations from {}: {}",
                path.display(),
                top.iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join(", ")
            );
            top
        }
        (None, None) => {
            return Err(CliError::spec(
                "learning-curve needs `configs` or `sweep_results` in [experiment]",
            ))
        }
    };
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
        .unwrap_or_else(|| DEFAULT_SIZES.iter().map(|&n| Size::Count(n)).collect());
    let aux_sets = ctx.spec.aux_sets();
    let seeds = ctx.spec.seeds();

    let mut cells = Vec::new();
    for (i, d) in ctx.datasets.iter().enumerate() {
        for size in resolve_sizes(&sizes, d.train.len(), &d.name) {
            for &seed in &seeds {
                let base = Cell {
                    dataset: i,
                    config: SharingConfig::none(),
                    aux: Vec::new(),
                    size,
                    seed,
                };
                cells.push(base.clone());
                for &config in configs.iter().filter(|c| !c.is_empty()) {
                    for aux in &aux_sets {
                        cells.push(Cell {
                            config,
                            aux: aux.clone(),
                            ..base.clone()
                        });
                    }
                }
            }
        }
    }
    ctx.create_out_dir()?;
    let sink = Mutex::new(Sink::open(&ctx.out)?);
    run_grid(&ctx, &cells, &sink)?;
    let sink = sink.into_inner().expect("result sink poisoned");

    let label = |config: &str, aux: &str| -> String {
        match (config.is_empty(), aux_sets.len()) {
            (true, _) => "single".into(),
            (false, 1) => config.into(),
            (false, _) => format!("{config}+{aux}"),
        }
    };
    let mut curve = Vec::new();
    for c in &cells {
        let key = c.key(&ctx);
        if let Some(r) = sink.results().get(&key) {
            curve.push(CurveRow {
                dataset: r.dataset.clone(),
                config: label(&r.config, &r.aux),
                size: r.size,
                seed: r.seed,
                accuracy: r.accuracy,
            });
        }
    }
    curve.sort_by(|a, b| {
        (&a.dataset, &a.config, a.size, a.seed).cmp(&(&b.dataset, &b.config, b.size, b.seed))
    });
    write_csv(&ctx.out.join("curve.csv"), &curve)?;

    for d in &ctx.datasets {
        let mut series: BTreeMap<&str, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
        for r in curve.iter().filter(|r| r.dataset == d.name) {
            series
                .entry(&r.config)
                .or_default()
                .entry(r.size)
                .or_default()
                .push(r.accuracy);
        }
        let chart = Chart {
            title: format!("{} learning curve", d.name),
            x_label: "training tokens (log scale)".into(),
            y_label: "word accuracy (%)".into(),
            log_x: true,
            series: series
                .into_iter()
                .map(|(name, by_size)| Series {
                    label: name.to_owned(),
                    points: by_size
                        .into_iter()
                        .map(|(s, v)| (s as f64, mean(&v)))
                        .collect(),
                })
                .collect(),
        };
        write_svg(&ctx.out.join(format!("curve_{}.svg", d.name)), &chart)?;
    }

    let micro = micro_curve(&ctx, &sink, &cells, &label)?;
    write_csv(&ctx.out.join("error_reduction.csv"), &micro)?;
    let mut series: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for m in &micro {
        if let Some(er) = m.error_reduction {
            series
                .entry(&m.config)
                .or_default()
                .push((m.size as f64, er));
        }
    }
    let chart = Chart {
        title: "Micro-averaged error reduction over single-task".into(),
        x_label: "training tokens (log scale)".into(),
        y_label: "error reduction (%)".into(),
        log_x: true,
        series: series
            .into_iter()
            .map(|(label, points)| Series {
                label: label.to_owned(),
                points,
            })
            .collect(),
    };
    write_svg(&ctx.out.join("error_reduction.svg"), &chart)?;
    for m in &micro {
        println!(
            "{:<16} size {:>6}: micro accuracy {:.2} vs single {:.2} over {} datasets, error reduction {}",
            m.config,
            m.size,
            m.accuracy,
            m.single,
            m.datasets,
            m.error_reduction.map_or("-".into(), |e| format!("{e:.2}"))
        );
    }

    let probes = run_probes(&ctx)?;
    for p in &probes {
        println!(
            "probe {} on {} (seed {}): {:.2}, identity {:.2}",
            p.task, p.dataset, p.seed, p.score, p.identity
        );
    }
    Ok(())
}

/// System and single-task reports of the same cells.
type ReportPair = (Vec<EvalReport>, Vec<EvalReport>);

/// Micro-averaged system and single-task accuracy of one seed, and the dataset count.
type SeedMicro = (f64, f64, usize);

/// Per configuration and size: micro-averaged accuracy over the datasets
/// that reached that size, for each seed, then the mean over seeds.
fn micro_curve(
    ctx: &Context,
    sink: &Sink,
    cells: &[Cell],
    label: &dyn Fn(&str, &str) -> String,
) -> Result<Vec<MicroRow>> {
    let dev_n: BTreeMap<&str, usize> = ctx
        .datasets
        .iter()
        .map(|d| (d.name.as_str(), d.dev.len()))
        .collect();
    let mut groups: BTreeMap<(String, usize, u64), ReportPair> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for c in cells.iter().filter(|c| !c.is_baseline()) {
        let key = c.key(ctx);
        let base_key = (key.0.clone(), String::new(), aux_label(&[]), key.3, key.4);
        let (Some(sys), Some(base)) = (sink.results().get(&key), sink.results().get(&base_key))
        else {
            continue;
        };
        if !seen.insert(key.clone()) {
            continue;
        }
        let n = dev_n[sys.dataset.as_str()];
        let g = groups
            .entry((label(&sys.config, &sys.aux), sys.size, sys.seed))
            .or_default();
        g.0.push(EvalReport::new(
            sys.dataset.clone(),
            n,
            sys.accuracy,
            sys.identity,
        ));
        g.1.push(EvalReport::new(
            base.dataset.clone(),
            n,
            base.accuracy,
            base.identity,
        ));
    }
    let mut by_size: BTreeMap<(String, usize), Vec<SeedMicro>> = BTreeMap::new();
    for ((lab, size, _), (sys, base)) in groups {
        by_size.entry((lab, size)).or_default().push((
            micro_average(&sys)?,
            micro_average(&base)?,
            sys.len(),
        ));
    }
    Ok(by_size
        .into_iter()
        .map(|((config, size), v)| {
            let accuracy = mean(&v.iter().map(|x| x.0).collect::<Vec<_>>());
            let single = mean(&v.iter().map(|x| x.1).collect::<Vec<_>>());
            let error_reduction = error_reduction(single, accuracy)
                .map_err(|e| warn!("{config} at {size}: {e}"))
                .ok();
            MicroRow {
                config,
                size,
                datasets: v.iter().map(|x| x.2).max().unwrap_or(0),
                single,
                accuracy,
                error_reduction,
            }
        })
        .collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub(crate) fn write_svg(path: &Path, chart: &Chart) -> Result<()> {
    fs::write(path, chart.to_svg()).map_err(io_error(path))
}

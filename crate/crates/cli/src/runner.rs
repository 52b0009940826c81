//! Loads a spec's inputs and trains grids of independent cells.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use log::{info, warn};
use normshare::data::{load_pairs, truncate, TaskDataset, TaskKind};
use normshare::evalkit::{
    identity_baseline, predict, split_report, write_predictions, EvalReport, Splits,
};
use normshare::model::{save_checkpoint, SharingConfig};
use normshare::training::{train, TrainLog, TrainPlan};
use numcore::Real;
use rayon::prelude::*;

use crate::error::{io_error, CliError, Result};
use crate::results::{append_timing, ResultRow, SplitRow, Table, TimingRow};
use crate::spec::{aux_label, ExperimentSpec, Needs, Precision, Size};

/// Command-line overrides applied on top of a spec.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
    pub workers: Option<usize>,
    pub precision: Option<Precision>,
}

impl RunOptions {
    /// Folds the overrides into `spec` and returns the output directory.
    pub fn apply(&self, spec: &mut ExperimentSpec) -> Result<PathBuf> {
        if let Some(seeds) = &self.seeds {
            spec.experiment.seeds = Some(seeds.clone());
        }
        if let Some(p) = self.precision {
            spec.experiment.precision = p;
        }
        if let Some(out) = &self.out {
            spec.out = Some(out.clone());
        }
        spec.out.clone().ok_or_else(|| {
            CliError::spec("no output directory: set `out` in the spec or pass --out")
        })
    }

    pub fn worker_count(&self) -> usize {
        self.workers
            .filter(|&w| w > 0)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}

/// A main normalization dataset with its fixed train and dev files.
#[derive(Debug, Clone)]
pub struct MainData {
    pub name: String,
    pub language: String,
    pub train: TaskDataset,
    pub dev: TaskDataset,
}

fn load_named(path: &Path, task: TaskKind, language: &str, name: &str) -> Result<TaskDataset> {
    let mut ds = load_pairs(path, task, language)?;
    ds.name = name.to_owned();
    Ok(ds)
}

/// A validated spec together with every dataset it names.
#[derive(Debug)]
pub struct Context {
    pub spec: ExperimentSpec,
    pub out: PathBuf,
    pub workers: usize,
    pub datasets: Vec<MainData>,
    pub aux: Vec<TaskDataset>,
}

impl Context {
    /// Validates `spec` and reads its data. Nothing is written.
    pub fn load(mut spec: ExperimentSpec, opts: &RunOptions, needs: Needs) -> Result<Self> {
        let out = opts.apply(&mut spec)?;
        spec.validate(needs)?;
        let datasets = spec
            .datasets
            .iter()
            .map(|d| {
                Ok(MainData {
                    name: d.name.clone(),
                    language: d.language.clone(),
                    train: load_named(&d.train, TaskKind::Normalization, &d.language, &d.name)?,
                    dev: load_named(
                        &d.dev,
                        TaskKind::Normalization,
                        &d.language,
                        &format!("{}_dev", d.name),
                    )?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let aux = spec
            .auxiliary
            .iter()
            .map(|a| {
                let name = format!("{}_{}", a.language.to_uppercase(), a.task.short());
                load_named(&a.path, a.task, &a.language, &name)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec,
            out,
            workers: opts.worker_count(),
            datasets,
            aux,
        })
    }

    pub fn precision(&self) -> Precision {
        self.spec.experiment.precision
    }

    /// Auxiliary datasets for `language`, in the order of `tasks`.
    pub fn aux_for(&self, language: &str, tasks: &[TaskKind]) -> Result<Vec<TaskDataset>> {
        tasks
            .iter()
            .map(|&t| {
                self.aux
                    .iter()
                    .find(|a| a.task == t && a.language.eq_ignore_ascii_case(language))
                    .cloned()
                    .ok_or_else(|| CliError::spec(format!("no {t} data for language {language}")))
            })
            .collect()
    }

    pub fn create_out_dir(&self) -> Result<()> {
        fs::create_dir_all(&self.out).map_err(io_error(&self.out))
    }

    pub fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| CliError::spec(format!("cannot start {} workers: {e}", self.workers)))
    }
}

/// Maps requested sizes onto a training file of `available` pairs.
/// Oversized requests are clipped to the file size with a warning.
pub fn resolve_sizes(requested: &[Size], available: usize, dataset: &str) -> Vec<usize> {
    let mut sizes: Vec<usize> = requested
        .iter()
        .map(|s| match *s {
            Size::Full => available,
            Size::Count(n) if n > available => {
                warn!(
                    "{dataset}: size {n} exceeds the {available} training pairs; using {available}"
                );
                available
            }
            Size::Count(n) => n,
        })
        .collect();
    sizes.sort_unstable();
    sizes.dedup();
    sizes
}

/// One (dataset, config, aux set, size, seed) training run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cell {
    pub dataset: usize,
    pub config: SharingConfig,
    pub aux: Vec<TaskKind>,
    pub size: usize,
    pub seed: u64,
}

impl Cell {
    pub fn is_baseline(&self) -> bool {
        self.config.is_empty() && self.aux.is_empty()
    }

    pub fn key(&self, ctx: &Context) -> (String, String, String, usize, u64) {
        (
            ctx.datasets[self.dataset].name.clone(),
            self.config.to_string(),
            aux_label(&self.aux),
            self.size,
            self.seed,
        )
    }

    fn baseline_key(&self, ctx: &Context) -> (String, String, String, usize, u64) {
        (
            ctx.datasets[self.dataset].name.clone(),
            String::new(),
            aux_label(&[]),
            self.size,
            self.seed,
        )
    }

    /// Directory name under `cells/`.
    pub fn dir_name(&self, ctx: &Context) -> String {
        let config = if self.config.is_empty() {
            "single".to_owned()
        } else {
            self.config.to_string()
        };
        format!(
            "{}__{}__{}__{}__s{}",
            ctx.datasets[self.dataset].name,
            config,
            aux_label(&self.aux),
            self.size,
            self.seed
        )
    }
}

/// What one finished cell produced.
#[derive(Debug, Clone)]
pub struct CellOutput {
    pub report: EvalReport,
    pub log: TrainLog,
    pub identity: f64,
    pub seconds: f64,
}

impl CellOutput {
    pub fn splits(&self) -> Splits {
        self.report.splits.unwrap_or_default()
    }
}

/// Trains one cell, evaluates it on the dataset's dev file and writes
/// `eval_report.json`, `train_log.jsonl`, `predictions.tsv` and, when
/// asked, `checkpoint.json` into `dir`.
pub fn run_cell(ctx: &Context, cell: &Cell, dir: &Path, checkpoint: bool) -> Result<CellOutput> {
    match ctx.precision() {
        Precision::F32 => run_cell_as::<f32>(ctx, cell, dir, checkpoint),
        Precision::F64 => run_cell_as::<f64>(ctx, cell, dir, checkpoint),
    }
}

fn run_cell_as<F: Real>(
    ctx: &Context,
    cell: &Cell,
    dir: &Path,
    checkpoint: bool,
) -> Result<CellOutput> {
    let start = Instant::now();
    let data = &ctx.datasets[cell.dataset];
    let main = truncate(&data.train, cell.size);
    let aux = ctx.aux_for(&data.language, &cell.aux)?;
    let mut plan = TrainPlan::new(&main, aux, cell.config, ctx.spec.hyper, cell.seed)?;
    plan.max_epochs = ctx.spec.experiment.max_epochs;
    plan.patience = ctx.spec.experiment.patience;
    let outcome = train::<F>(&plan)?;

    let preds = predict(&outcome.model, 0, &data.dev.pairs)?;
    let known: HashSet<String> = plan.main.pairs.iter().map(|p| p.source.clone()).collect();
    let report = split_report(&data.name, &preds, &known)?;
    let identity = identity_baseline(&data.dev);

    fs::create_dir_all(dir).map_err(io_error(dir))?;
    report.write_json(dir.join("eval_report.json"))?;
    outcome.log.write_jsonl(dir.join("train_log.jsonl"))?;
    write_predictions(dir.join("predictions.tsv"), &preds)?;
    if checkpoint {
        save_checkpoint(&outcome.model, dir.join("checkpoint.json"))?;
    }
    Ok(CellOutput {
        report,
        log: outcome.log,
        identity,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Result tables shared by the cells of one command.
pub struct Sink {
    results: Table<ResultRow>,
    splits: Table<SplitRow>,
    timings: PathBuf,
}

impl Sink {
    pub fn open(dir: &Path) -> Result<Self> {
        Ok(Self {
            results: Table::open(dir.join("results.csv"))?,
            splits: Table::open(dir.join("splits.csv"))?,
            timings: dir.join("timings.csv"),
        })
    }

    pub fn results(&self) -> &Table<ResultRow> {
        &self.results
    }

    pub fn contains(&self, key: &(String, String, String, usize, u64)) -> bool {
        self.results.contains(key)
    }

    /// Records a finished cell. The error reduction is filled in when the
    /// matching single-task row is already present.
    pub fn record(&mut self, ctx: &Context, cell: &Cell, out: &CellOutput) -> Result<ResultRow> {
        let (dataset, config, aux, size, seed) = cell.key(ctx);
        let error_reduction = if cell.is_baseline() {
            None
        } else {
            self.results.get(&cell.baseline_key(ctx)).and_then(|b| {
                normshare::evalkit::error_reduction(b.accuracy, out.report.accuracy).ok()
            })
        };
        let row = ResultRow {
            dataset: dataset.clone(),
            config: config.clone(),
            aux: aux.clone(),
            size,
            seed,
            accuracy: out.report.accuracy,
            identity: out.identity,
            error_reduction,
        };
        // results.csv decides completion; a split row left by an interrupted run is overwritten
        let s = out.splits();
        self.splits.upsert(SplitRow {
            dataset: dataset.clone(),
            config: config.clone(),
            aux: aux.clone(),
            size,
            seed,
            known_n: s.known().n,
            known_correct: s.known().correct,
            unknown_n: s.unknown().n,
            unknown_correct: s.unknown().correct,
            identity_n: s.identity().n,
            identity_correct: s.identity().correct,
            changed_n: s.changed().n,
            changed_correct: s.changed().correct,
        })?;
        self.results.insert(row.clone())?;
        append_timing(
            &self.timings,
            &TimingRow {
                dataset,
                config,
                aux,
                size,
                seed,
                seconds: out.seconds,
            },
        )?;
        Ok(row)
    }
}

/// Runs every cell without a result yet, single-task baselines first so
/// that the other rows can report their error reduction. Returns the
/// number of cells trained.
pub fn run_grid(ctx: &Context, cells: &[Cell], sink: &Mutex<Sink>) -> Result<usize> {
    let pending: Vec<&Cell> = {
        let sink = sink.lock().expect("result sink poisoned");
        cells
            .iter()
            .filter(|c| !sink.contains(&c.key(ctx)))
            .collect()
    };
    let skipped = cells.len() - pending.len();
    if skipped > 0 {
        info!("{skipped} of {} cells already have results", cells.len());
    }
    let (baselines, rest): (Vec<&Cell>, Vec<&Cell>) =
        pending.into_iter().partition(|c| c.is_baseline());
    let pool = ctx.pool()?;
    let cells_dir = ctx.out.join("cells");
    let save = ctx.spec.experiment.save_checkpoints;
    for phase in [baselines, rest] {
        pool.install(|| {
            phase.par_iter().try_for_each(|cell| -> Result<()> {
                let out = run_cell(ctx, cell, &cells_dir.join(cell.dir_name(ctx)), save)?;
                let row = sink
                    .lock()
                    .expect("result sink poisoned")
                    .record(ctx, cell, &out)?;
                info!(
                    "{} {} [{}] size {} seed {}: accuracy {:.2} (identity {:.2}) in {:.1}s",
                    row.dataset,
                    if row.config.is_empty() {
                        "single"
                    } else {
                        &row.config
                    },
                    row.aux,
                    row.size,
                    row.seed,
                    row.accuracy,
                    row.identity,
                    out.seconds
                );
                Ok(())
            })
        })?;
    }
    Ok(cells.len() - skipped)
}

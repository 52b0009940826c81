//! Multi-task training with early stopping, and zero-shot training.

mod schedule;
mod zero_shot;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use numcore::{adam_step, seeded_rng, AdamConfig, AdamState, ParamSet, Real, Rng, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::data::{build_vocabularies, split_train_validation, TaskDataset, TaskKind, TokenPair};
use crate::error::{io_error, Error, Result};
use crate::evalkit::{predict, word_accuracy};
use crate::model::{
    build_model_with_rng, HyperParams, Mode, ModelTask, MultiTaskModel, SharingConfig,
};

pub use schedule::{
    make_mtl_batches, make_zero_shot_schedule, CompositeBatch, Cursor, MtlScheduler, SubBatch,
    ZeroShotScheduler,
};
pub use zero_shot::{train_zero_shot, ZeroShotOutcome, ZeroShotPlan};

/// Share of a main dataset used for training; the rest validates.
pub const TRAIN_RATIO: f64 = 0.9;

/// Key under which pairs of `task` in `language` are counted in the log.
pub fn token_key(task: TaskKind, language: &str) -> String {
    format!("{}/{}", task.short(), language.to_lowercase())
}

/// Why training ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
    FixedEpochs,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::Patience => "patience",
            StopReason::MaxEpochs => "max_epochs",
            StopReason::FixedEpochs => "fixed_epochs",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-symbol negative log-likelihood over the epoch.
    pub train_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_acc: Option<f64>,
    /// Cumulative pairs consumed, keyed by [`token_key`].
    pub tokens_seen: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub config: SharingConfig,
    pub epochs: Vec<EpochRecord>,
    pub stop_reason: Option<StopReason>,
    pub best_epoch: Option<usize>,
}

#[derive(Serialize)]
struct Summary<'a> {
    config: &'a SharingConfig,
    stop_reason: Option<StopReason>,
    best_epoch: Option<usize>,
}

impl TrainLog {
    pub fn new(config: SharingConfig) -> Self {
        Self {
            config,
            epochs: Vec::new(),
            stop_reason: None,
            best_epoch: None,
        }
    }

    /// Pairs of `task` in `language` seen by the end of training.
    pub fn tokens_seen(&self, task: TaskKind, language: &str) -> usize {
        self.epochs
            .last()
            .and_then(|r| r.tokens_seen.get(&token_key(task, language)).copied())
            .unwrap_or(0)
    }

    /// One JSON object per epoch, then a summary line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.epochs {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        let summary = Summary {
            config: &self.config,
            stop_reason: self.stop_reason,
            best_epoch: self.best_epoch,
        };
        out.push_str(&serde_json::to_string(&summary).expect("summary serializes"));
        out.push('\n');
        out
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl()).map_err(io_error(path))
    }
}

/// Patience-based stopping on validation accuracy. Only strict improvements
/// reset the counter, so the earliest of equally good epochs is kept.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            stale: 0,
        }
    }

    /// Records one epoch and reports whether it is the new best.
    pub fn observe(&mut self, epoch: usize, accuracy: f64) -> bool {
        match self.best {
            Some((_, best)) if accuracy <= best => {
                self.stale += 1;
                false
            }
            _ => {
                self.best = Some((epoch, accuracy));
                self.stale = 0;
                true
            }
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

/// Everything needed for one standard-mode run.
#[derive(Debug, Clone)]
pub struct TrainPlan {
    pub main: TaskDataset,
    pub validation: TaskDataset,
    pub aux: Vec<TaskDataset>,
    pub config: SharingConfig,
    pub hp: HyperParams,
    pub seed: u64,
    pub max_epochs: usize,
    pub patience: usize,
}

impl TrainPlan {
    /// Plan with the standard stopping rule, holding out the last tenth of
    /// `dataset` for validation.
    pub fn new(
        dataset: &TaskDataset,
        aux: Vec<TaskDataset>,
        config: SharingConfig,
        hp: HyperParams,
        seed: u64,
    ) -> Result<Self> {
        let (main, validation) = split_train_validation(dataset, TRAIN_RATIO)?;
        Ok(Self::with_split(main, validation, aux, config, hp, seed))
    }

    pub fn with_split(
        main: TaskDataset,
        validation: TaskDataset,
        aux: Vec<TaskDataset>,
        config: SharingConfig,
        hp: HyperParams,
        seed: u64,
    ) -> Self {
        Self {
            main,
            validation,
            aux,
            config,
            hp,
            seed,
            max_epochs: 50,
            patience: 5,
        }
    }

    fn datasets(&self) -> Vec<&TaskDataset> {
        std::iter::once(&self.main).chain(&self.aux).collect()
    }
}

pub struct TrainOutcome<F> {
    /// Parameters from the best validation epoch.
    pub model: MultiTaskModel<F>,
    pub log: TrainLog,
    pub best_val_acc: Option<f64>,
}

/// Trains with early stopping; see [`train_with`].
pub fn train<F: Real>(plan: &TrainPlan) -> Result<TrainOutcome<F>> {
    train_with(plan, |_| {})
}

/// Trains the main task (task 0) with its auxiliary tasks, calling
/// `on_epoch` after every epoch. One RNG stream seeded from `plan.seed`
/// drives initialization, shuffling and dropout, in that order.
pub fn train_with<F: Real>(
    plan: &TrainPlan,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<F>> {
    plan.hp.validate()?;
    if plan.main.is_empty() {
        return Err(Error::Contract(format!(
            "training split of {} is empty",
            plan.main.name
        )));
    }
    if plan.max_epochs == 0 {
        return Err(Error::Contract("max_epochs must be positive".into()));
    }
    let datasets = plan.datasets();
    let tasks: Vec<ModelTask> = datasets
        .iter()
        .map(|d| ModelTask::new(d.name.clone(), d.task, d.language.clone()))
        .collect();
    let (src, tgt) = build_vocabularies(&datasets, None);
    let mut rng = seeded_rng(plan.seed);
    let mut model = build_model_with_rng::<F>(plan.config, tasks, src, tgt, plan.hp, &mut rng)?;
    let aux_lens: Vec<usize> = plan.aux.iter().map(TaskDataset::len).collect();
    let mut scheduler = MtlScheduler::new(plan.main.len(), &aux_lens, &plan.hp, &mut rng)?;
    let mut adam = AdamState::new(AdamConfig {
        lr: plan.hp.learning_rate,
        ..AdamConfig::default()
    });

    let mut log = TrainLog::new(plan.config);
    let mut seen = TokenCounter::new(datasets.iter().copied());
    let mut stopping = EarlyStopping::new(plan.patience);
    let mut best_params: Option<ParamSet<F>> = None;

    for epoch in 1..=plan.max_epochs {
        let (mut nll, mut count) = (0.0, 0);
        for batch in scheduler.epoch(&mut rng) {
            let parts: Vec<(usize, Vec<&TokenPair>)> = batch
                .parts
                .iter()
                .map(|p| {
                    (
                        p.source,
                        p.indices
                            .iter()
                            .map(|&i| &datasets[p.source].pairs[i])
                            .collect(),
                    )
                })
                .collect();
            for (task, pairs) in &parts {
                seen.add(datasets[*task], pairs.len());
            }
            let (s, n) = update_step(&mut model, &mut adam, &parts, &mut rng)?;
            nll += s;
            count += n;
        }
        let val_acc = if plan.validation.is_empty() {
            None
        } else {
            Some(word_accuracy(&predict(&model, 0, &plan.validation.pairs)?)?)
        };
        let record = EpochRecord {
            epoch,
            train_loss: nll / count.max(1) as f64,
            val_acc,
            tokens_seen: seen.snapshot(),
        };
        on_epoch(&record);
        log.epochs.push(record);
        match val_acc {
            Some(acc) => {
                if stopping.observe(epoch, acc) {
                    best_params = Some(model.params().clone());
                }
                if stopping.should_stop() {
                    log.stop_reason = Some(StopReason::Patience);
                    break;
                }
            }
            None => {
                best_params = None;
            }
        }
    }
    if log.stop_reason.is_none() {
        log.stop_reason = Some(StopReason::MaxEpochs);
    }
    if let Some(best) = best_params {
        model.params_mut().copy_values_from(&best);
    }
    log.best_epoch = match stopping.best() {
        Some((epoch, _)) => Some(epoch),
        None => log.epochs.last().map(|r| r.epoch),
    };
    Ok(TrainOutcome {
        model,
        best_val_acc: stopping.best().map(|(_, acc)| acc),
        log,
    })
}

/// One Adam update on the composite loss: the summed negative
/// log-likelihood of every part divided by the total symbol count.
/// Returns the summed likelihood and the count.
pub fn update_step<F: Real>(
    model: &mut MultiTaskModel<F>,
    adam: &mut AdamState<F>,
    parts: &[(usize, Vec<&TokenPair>)],
    rng: &mut Rng,
) -> Result<(f64, usize)> {
    let mut tape = Tape::new();
    let mut total: Option<Var> = None;
    let mut count = 0;
    for (task, pairs) in parts {
        if pairs.is_empty() {
            continue;
        }
        let (s, n) = model.nll_sum(&mut tape, *task, pairs, &mut Mode::Train(&mut *rng))?;
        total = Some(match total {
            Some(t) => tape.add(t, s)?,
            None => s,
        });
        count += n;
    }
    let total = total.ok_or_else(|| Error::Contract("update on an empty batch".into()))?;
    let loss = tape.scale(total, F::of(1.0 / count as f64));
    tape.backward(loss)?;
    let ids = tape.accumulate_param_grads(model.params_mut());
    adam_step(model.params_mut(), &ids, adam)?;
    Ok((tape.value(total)[0].f64(), count))
}

/// Running pair counts per (task, language).
#[derive(Debug, Clone, Default)]
pub(crate) struct TokenCounter(BTreeMap<String, usize>);

impl TokenCounter {
    pub(crate) fn new<'a>(datasets: impl IntoIterator<Item = &'a TaskDataset>) -> Self {
        let mut c = Self::default();
        for d in datasets {
            c.register(d.task, &d.language);
        }
        c
    }

    pub(crate) fn register(&mut self, task: TaskKind, language: &str) {
        self.0.entry(token_key(task, language)).or_insert(0);
    }

    pub(crate) fn add(&mut self, d: &TaskDataset, n: usize) {
        *self.0.entry(token_key(d.task, &d.language)).or_insert(0) += n;
    }

    pub(crate) fn snapshot(&self) -> BTreeMap<String, usize> {
        self.0.clone()
    }
}

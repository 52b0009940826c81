use numcore::{seeded_rng, AdamConfig, AdamState, Real};

use super::{update_step, EpochRecord, StopReason, TokenCounter, TrainLog, ZeroShotScheduler};
use crate::data::{
    build_vocabularies, tag_for_zero_shot, TagSet, TaskDataset, TaskKind, TokenPair,
};
use crate::error::{Error, Result};
use crate::evalkit::{predict, EvalReport};
use crate::model::{build_model_with_rng, HyperParams, ModelTask, MultiTaskModel, SharingConfig};

/// A zero-shot run: one fully shared model over every dataset except the
/// target language's normalization data.
#[derive(Debug, Clone)]
pub struct ZeroShotPlan {
    /// Full inventory, target-language normalization sets included.
    pub datasets: Vec<TaskDataset>,
    pub target_language: String,
    pub hp: HyperParams,
    pub seed: u64,
    pub epochs: usize,
    pub samples_per_update: usize,
    pub samples_per_epoch: usize,
    /// Names of excluded datasets to train on anyway. Only for testing the
    /// leakage guard: training then fails with [`Error::Invariant`].
    pub force_include: Vec<String>,
}

impl ZeroShotPlan {
    pub fn new(
        datasets: Vec<TaskDataset>,
        target_language: impl Into<String>,
        hp: HyperParams,
        seed: u64,
    ) -> Self {
        Self {
            datasets,
            target_language: target_language.into(),
            hp,
            seed,
            epochs: 10,
            samples_per_update: 10,
            samples_per_epoch: 1000,
            force_include: Vec::new(),
        }
    }

    fn is_target_normalization(&self, d: &TaskDataset) -> bool {
        d.task == TaskKind::Normalization && d.language.eq_ignore_ascii_case(&self.target_language)
    }
}

pub struct ZeroShotOutcome<F> {
    pub model: MultiTaskModel<F>,
    pub log: TrainLog,
    /// The inventory with every source prefixed by its language and task tags.
    /// Model task `i` corresponds to dataset `i`.
    pub tagged: Vec<TaskDataset>,
    /// Indices of the target-language normalization datasets.
    pub targets: Vec<usize>,
}

impl<F: Real> ZeroShotOutcome<F> {
    /// Decodes every target-language normalization set.
    pub fn evaluate_targets(&self) -> Result<Vec<EvalReport>> {
        self.targets
            .iter()
            .map(|&i| {
                let d = &self.tagged[i];
                EvalReport::from_predictions(d.name.clone(), predict(&self.model, i, &d.pairs)?)
            })
            .collect()
    }
}

/// Trains for a fixed number of epochs with every component shared and
/// reports nothing on validation.
pub fn train_zero_shot<F: Real>(
    plan: &ZeroShotPlan,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<ZeroShotOutcome<F>> {
    plan.hp.validate()?;
    let mut rng = seeded_rng(plan.seed);
    let mut scheduler = ZeroShotScheduler::new(
        &plan.datasets,
        &plan.target_language,
        plan.samples_per_update,
        plan.samples_per_epoch,
        &mut rng,
    )?;
    for name in &plan.force_include {
        let i = plan
            .datasets
            .iter()
            .position(|d| &d.name == name)
            .ok_or_else(|| Error::Contract(format!("no dataset named {name}")))?;
        scheduler.force_include(i);
    }

    let all: Vec<&TaskDataset> = plan.datasets.iter().collect();
    let tags = TagSet::from_datasets(&all);
    let trained: Vec<&TaskDataset> = scheduler
        .combinations()
        .iter()
        .map(|&i| &plan.datasets[i])
        .collect();
    let (src, tgt) = build_vocabularies(&trained, Some(&tags));
    let tagged = plan
        .datasets
        .iter()
        .map(|d| {
            let pairs = d
                .pairs
                .iter()
                .map(|p| tag_for_zero_shot(p, &d.language, d.task, &src))
                .collect::<Result<Vec<_>>>()?;
            Ok(d.with_pairs(pairs))
        })
        .collect::<Result<Vec<TaskDataset>>>()?;

    let tasks: Vec<ModelTask> = plan
        .datasets
        .iter()
        .map(|d| ModelTask::new(d.name.clone(), d.task, d.language.clone()))
        .collect();
    let config = SharingConfig::all();
    let mut model = build_model_with_rng::<F>(config, tasks, src, tgt, plan.hp, &mut rng)?;
    let mut adam = AdamState::new(AdamConfig {
        lr: plan.hp.learning_rate,
        ..AdamConfig::default()
    });
    let mut log = TrainLog::new(config);
    let mut seen = TokenCounter::new(&plan.datasets);

    for epoch in 1..=plan.epochs {
        let (mut nll, mut count) = (0.0, 0);
        for batch in scheduler.epoch(&mut rng) {
            if let Some(p) = batch
                .parts
                .iter()
                .find(|p| plan.is_target_normalization(&plan.datasets[p.source]))
            {
                let d = &plan.datasets[p.source];
                return Err(Error::Invariant(format!(
                    "zero-shot batch contains {} normalization pairs of the target language {} (dataset {})",
                    p.indices.len(),
                    plan.target_language,
                    d.name
                )));
            }
            let parts: Vec<(usize, Vec<&TokenPair>)> = batch
                .parts
                .iter()
                .map(|p| {
                    (
                        p.source,
                        p.indices
                            .iter()
                            .map(|&i| &tagged[p.source].pairs[i])
                            .collect(),
                    )
                })
                .collect();
            for (d, pairs) in &parts {
                seen.add(&plan.datasets[*d], pairs.len());
            }
            let (s, n) = update_step(&mut model, &mut adam, &parts, &mut rng)?;
            nll += s;
            count += n;
        }
        let record = EpochRecord {
            epoch,
            train_loss: nll / count.max(1) as f64,
            val_acc: None,
            tokens_seen: seen.snapshot(),
        };
        on_epoch(&record);
        log.epochs.push(record);
    }
    log.stop_reason = Some(StopReason::FixedEpochs);
    log.best_epoch = log.epochs.last().map(|r| r.epoch);
    let targets = (0..plan.datasets.len())
        .filter(|&i| plan.is_target_normalization(&plan.datasets[i]))
        .collect();
    Ok(ZeroShotOutcome {
        model,
        log,
        tagged,
        targets,
    })
}

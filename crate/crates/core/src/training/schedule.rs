use std::collections::BTreeSet;

use numcore::Rng;
use rand::seq::SliceRandom;

use crate::data::{TaskDataset, TaskKind};
use crate::error::{Error, Result};
use crate::model::HyperParams;

/// Indices into one dataset for one update.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubBatch {
    /// Position of the dataset in the scheduler's dataset list.
    pub source: usize,
    pub indices: Vec<usize>,
}

/// Everything that goes into a single parameter update.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompositeBatch {
    pub parts: Vec<SubBatch>,
}

impl CompositeBatch {
    pub fn len(&self) -> usize {
        self.parts.iter().map(|p| p.indices.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Endless shuffled pass over `0..len`, reshuffled on every wraparound.
#[derive(Debug, Clone)]
pub struct Cursor {
    order: Vec<usize>,
    pos: usize,
}

impl Cursor {
    pub fn new(len: usize, rng: &mut Rng) -> Self {
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(rng);
        Self { order, pos: 0 }
    }

    pub fn take(&mut self, n: usize, rng: &mut Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Standard-mode scheduler: each update has up to `batch_size_main` main
/// pairs plus `aux_tokens_per_batch` pairs from every auxiliary dataset.
/// Dataset 0 is the main task; auxiliary datasets follow in order.
#[derive(Debug, Clone)]
pub struct MtlScheduler {
    main_len: usize,
    batch_main: usize,
    aux_per_batch: usize,
    aux: Vec<Cursor>,
}

impl MtlScheduler {
    pub fn new(
        main_len: usize,
        aux_lens: &[usize],
        hp: &HyperParams,
        rng: &mut Rng,
    ) -> Result<Self> {
        if main_len == 0 {
            return Err(Error::Contract("main training split is empty".into()));
        }
        if let Some(i) = aux_lens.iter().position(|&n| n == 0) {
            return Err(Error::Contract(format!("auxiliary dataset {i} is empty")));
        }
        Ok(Self {
            main_len,
            batch_main: hp.batch_size_main,
            aux_per_batch: hp.aux_tokens_per_batch,
            aux: aux_lens.iter().map(|&n| Cursor::new(n, rng)).collect(),
        })
    }

    /// One epoch: a shuffled pass over the main data, in composite batches.
    pub fn epoch(&mut self, rng: &mut Rng) -> Vec<CompositeBatch> {
        let mut order: Vec<usize> = (0..self.main_len).collect();
        order.shuffle(rng);
        order
            .chunks(self.batch_main)
            .map(|main| {
                let mut parts = vec![SubBatch {
                    source: 0,
                    indices: main.to_vec(),
                }];
                for (i, cursor) in self.aux.iter_mut().enumerate() {
                    parts.push(SubBatch {
                        source: i + 1,
                        indices: cursor.take(self.aux_per_batch, rng),
                    });
                }
                CompositeBatch { parts }
            })
            .collect()
    }
}

/// One epoch of standard-mode batches for `main` plus `aux`.
pub fn make_mtl_batches(
    main: &TaskDataset,
    aux: &[TaskDataset],
    hp: &HyperParams,
    rng: &mut Rng,
) -> Result<Vec<CompositeBatch>> {
    let lens: Vec<usize> = aux.iter().map(TaskDataset::len).collect();
    Ok(MtlScheduler::new(main.len(), &lens, hp, rng)?.epoch(rng))
}

/// Zero-shot scheduler over every (dataset, task) combination except the
/// normalization sets of the target language.
#[derive(Debug, Clone)]
pub struct ZeroShotScheduler {
    included: Vec<usize>,
    excluded: Vec<usize>,
    cursors: Vec<Cursor>,
    per_update: usize,
    per_epoch: usize,
}

impl ZeroShotScheduler {
    /// `datasets` is the full inventory; indices in batches refer to it.
    pub fn new(
        datasets: &[TaskDataset],
        target_language: &str,
        per_update: usize,
        per_epoch: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let target = target_language.to_lowercase();
        let languages: BTreeSet<String> =
            datasets.iter().map(|d| d.language.to_lowercase()).collect();
        if languages.len() < 2 {
            return Err(Error::Contract(format!(
                "zero-shot training needs at least two languages, found {}",
                languages.len()
            )));
        }
        if per_update == 0 || per_epoch == 0 {
            return Err(Error::Contract(
                "zero-shot sample counts must be positive".into(),
            ));
        }
        let is_target_norm = |d: &TaskDataset| {
            d.task == TaskKind::Normalization && d.language.to_lowercase() == target
        };
        if !datasets
            .iter()
            .any(|d| d.task.is_auxiliary() && d.language.to_lowercase() == target)
        {
            return Err(Error::Contract(format!(
                "no auxiliary data for target language {target}; the model would never see it"
            )));
        }
        let (excluded, included): (Vec<usize>, Vec<usize>) =
            (0..datasets.len()).partition(|&i| is_target_norm(&datasets[i]));
        if let Some(&i) = included.iter().find(|&&i| datasets[i].is_empty()) {
            return Err(Error::Contract(format!(
                "dataset {} is empty",
                datasets[i].name
            )));
        }
        let cursors = (0..datasets.len())
            .map(|i| Cursor::new(datasets[i].len().max(1), rng))
            .collect();
        Ok(Self {
            included,
            excluded,
            cursors,
            per_update,
            per_epoch,
        })
    }

    /// Dataset indices that are trained on.
    pub fn combinations(&self) -> &[usize] {
        &self.included
    }

    /// Dataset indices withheld because they are target-language normalization data.
    pub fn excluded(&self) -> &[usize] {
        &self.excluded
    }

    /// Puts an excluded dataset back into the schedule. This breaks the
    /// zero-shot contract on purpose and exists to exercise the trainer guard.
    pub fn force_include(&mut self, dataset: usize) {
        if let Some(pos) = self.excluded.iter().position(|&d| d == dataset) {
            self.excluded.remove(pos);
            self.included.push(dataset);
            self.included.sort_unstable();
        }
    }

    /// One epoch: `per_epoch` samples from every combination, `per_update`
    /// from each in every update (the last update may be smaller).
    pub fn epoch(&mut self, rng: &mut Rng) -> Vec<CompositeBatch> {
        let mut batches = Vec::new();
        let mut drawn = 0;
        while drawn < self.per_epoch {
            let n = self.per_update.min(self.per_epoch - drawn);
            let parts = self
                .included
                .iter()
                .map(|&d| SubBatch {
                    source: d,
                    indices: self.cursors[d].take(n, rng),
                })
                .collect();
            batches.push(CompositeBatch { parts });
            drawn += n;
        }
        batches
    }
}

/// Builds the zero-shot scheduler with the default sample counts.
pub fn make_zero_shot_schedule(
    datasets: &[TaskDataset],
    target_language: &str,
    rng: &mut Rng,
) -> Result<ZeroShotScheduler> {
    ZeroShotScheduler::new(datasets, target_language, 10, 1000, rng)
}

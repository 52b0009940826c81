//! Corpora for the normalization task and its auxiliary tasks.

mod pairs;
mod synthetic;
mod vocab;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub use pairs::{
    load_pairs, parse_pairs, serialize_pairs, split_train_validation, truncate, write_pairs,
};
pub use synthetic::{
    generate_synthetic_corpus, pseudo_phonemes, Position, Rule, RuleSet, SyntheticCorpus,
    SyntheticOptions,
};
pub use vocab::{build_vocabularies, tag_for_zero_shot, TagSet, Vocabulary, BOS, EOS, PAD, UNK};

/// The main task and the three auxiliary transduction tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Normalization,
    Autoencoding,
    G2p,
    Lemmatization,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [
        TaskKind::Normalization,
        TaskKind::Autoencoding,
        TaskKind::G2p,
        TaskKind::Lemmatization,
    ];

    /// Short identifier used in tags, file names, and result tables.
    pub fn short(self) -> &'static str {
        match self {
            TaskKind::Normalization => "norm",
            TaskKind::Autoencoding => "autoenc",
            TaskKind::G2p => "g2p",
            TaskKind::Lemmatization => "lemma",
        }
    }

    pub fn is_auxiliary(self) -> bool {
        self != TaskKind::Normalization
    }

    /// Splits a target string into output symbols: phonemes are
    /// space-separated for g2p, every other task is character-level.
    pub fn target_symbols(self, target: &str) -> Vec<String> {
        match self {
            TaskKind::G2p => target.split_whitespace().map(str::to_owned).collect(),
            _ => target.chars().map(String::from).collect(),
        }
    }

    /// Inverse of [`TaskKind::target_symbols`].
    pub fn join_symbols(self, symbols: &[&str]) -> String {
        match self {
            TaskKind::G2p => symbols.join(" "),
            _ => symbols.concat(),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            TaskKind::Normalization => "normalization",
            TaskKind::Autoencoding => "autoencoding",
            TaskKind::G2p => "g2p",
            TaskKind::Lemmatization => "lemmatization",
        };
        f.write_str(name)
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normalization" | "norm" => Ok(TaskKind::Normalization),
            "autoencoding" | "autoenc" => Ok(TaskKind::Autoencoding),
            "g2p" => Ok(TaskKind::G2p),
            "lemmatization" | "lemma" => Ok(TaskKind::Lemmatization),
            other => Err(Error::Parse(format!("unknown task {other:?}"))),
        }
    }
}

/// Language and task identifiers prepended to the source in zero-shot training.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ZeroShotTags {
    pub language: String,
    pub task: TaskKind,
}

/// One word-level training instance.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenPair {
    pub source: String,
    pub target: String,
    pub tags: Option<ZeroShotTags>,
}

impl TokenPair {
    pub fn new(source: impl Into<String>, target: impl Into<String>) -> Self {
        Self {
            source: source.into(),
            target: target.into(),
            tags: None,
        }
    }

    /// Source symbols as seen by the encoder: tag symbols, then characters.
    pub fn source_symbols(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.source.len() + 2);
        if let Some(tags) = &self.tags {
            out.push(TagSet::language_symbol(&tags.language));
            out.push(TagSet::task_symbol(tags.task));
        }
        out.extend(self.source.chars().map(String::from));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    pub name: String,
    pub task: TaskKind,
    pub language: String,
    pub pairs: Vec<TokenPair>,
}

impl TaskDataset {
    pub fn new(
        name: impl Into<String>,
        task: TaskKind,
        language: impl Into<String>,
        pairs: Vec<TokenPair>,
    ) -> Self {
        Self {
            name: name.into(),
            task,
            language: language.into(),
            pairs,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Same metadata, different pairs.
    pub fn with_pairs(&self, pairs: Vec<TokenPair>) -> Self {
        Self {
            name: self.name.clone(),
            task: self.task,
            language: self.language.clone(),
            pairs,
        }
    }
}

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{TaskDataset, TaskKind, TokenPair, ZeroShotTags};
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

const SPECIALS: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Frozen symbol table; ids are dense and assigned in first-appearance order
/// after the four specials.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn with_specials() -> Self {
        let mut v = Self {
            symbols: Vec::new(),
            index: HashMap::new(),
        };
        for s in SPECIALS {
            v.insert(s);
        }
        v
    }

    fn insert(&mut self, symbol: &str) {
        if !self.index.contains_key(symbol) {
            self.index.insert(symbol.to_owned(), self.symbols.len());
            self.symbols.push(symbol.to_owned());
        }
    }

    pub fn from_symbols<I, S>(symbols: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Self::with_specials();
        for s in symbols {
            v.insert(s.as_ref());
        }
        v
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn get(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn contains(&self, symbol: &str) -> bool {
        self.index.contains_key(symbol)
    }

    /// Id of `symbol`, or `<unk>` when it was never seen.
    pub fn id(&self, symbol: &str) -> usize {
        self.get(symbol).unwrap_or(UNK)
    }

    pub fn symbol(&self, id: usize) -> &str {
        &self.symbols[id]
    }

    pub fn is_special(id: usize) -> bool {
        id < SPECIALS.len()
    }

    pub fn encode<S: AsRef<str>>(&self, symbols: &[S]) -> Vec<usize> {
        symbols.iter().map(|s| self.id(s.as_ref())).collect()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }
}

impl From<Vec<String>> for Vocabulary {
    fn from(symbols: Vec<String>) -> Self {
        let index = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Self { symbols, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.symbols
    }
}

/// Language and task identifiers available to zero-shot inputs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TagSet {
    pub languages: Vec<String>,
    pub tasks: Vec<TaskKind>,
}

impl TagSet {
    /// Collects every language and task in `datasets`, in first-appearance order.
    pub fn from_datasets(datasets: &[&TaskDataset]) -> Self {
        let mut tags = TagSet::default();
        for ds in datasets {
            let lang = ds.language.to_lowercase();
            if !tags.languages.contains(&lang) {
                tags.languages.push(lang);
            }
            if !tags.tasks.contains(&ds.task) {
                tags.tasks.push(ds.task);
            }
        }
        tags
    }

    pub fn language_symbol(language: &str) -> String {
        format!("<LANG={}>", language.to_lowercase())
    }

    pub fn task_symbol(task: TaskKind) -> String {
        format!("<TASK={}>", task.short())
    }

    pub fn symbols(&self) -> Vec<String> {
        self.languages
            .iter()
            .map(|l| Self::language_symbol(l))
            .chain(self.tasks.iter().map(|&t| Self::task_symbol(t)))
            .collect()
    }
}

/// Builds joint source and target vocabularies over all datasets. Tag symbols
/// are source-side only.
pub fn build_vocabularies(
    datasets: &[&TaskDataset],
    tags: Option<&TagSet>,
) -> (Vocabulary, Vocabulary) {
    let mut src = Vocabulary::with_specials();
    let mut tgt = Vocabulary::with_specials();
    if let Some(tags) = tags {
        for s in tags.symbols() {
            src.insert(&s);
        }
    }
    for ds in datasets {
        for p in &ds.pairs {
            for c in p.source.chars() {
                let mut buf = [0u8; 4];
                src.insert(c.encode_utf8(&mut buf));
            }
            for s in ds.task.target_symbols(&p.target) {
                tgt.insert(&s);
            }
        }
    }
    (src, tgt)
}

/// Prepends the language and task identifiers to the source of `pair`.
pub fn tag_for_zero_shot(
    pair: &TokenPair,
    language: &str,
    task: TaskKind,
    vocab: &Vocabulary,
) -> Result<TokenPair> {
    if pair.tags.is_some() {
        return Err(Error::Contract(format!(
            "pair {:?} is already tagged",
            pair.source
        )));
    }
    for sym in [TagSet::language_symbol(language), TagSet::task_symbol(task)] {
        if !vocab.contains(&sym) {
            return Err(Error::Contract(format!(
                "tag {sym} is not registered in the source vocabulary"
            )));
        }
    }
    Ok(TokenPair {
        source: pair.source.clone(),
        target: pair.target.clone(),
        tags: Some(ZeroShotTags {
            language: language.to_lowercase(),
            task,
        }),
    })
}

//! Desk-scale stand-in for the real corpora: a seeded syllable lexicon,
//! Zipf-distributed tokens, and probabilistic spelling corruption.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use numcore::{seeded_rng, Rng};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{write_pairs, TaskDataset, TaskKind, TokenPair};
use crate::error::{io_error, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Position {
    Initial,
    Final,
    Any,
}

/// One probabilistic rewrite. A rule fires at most once per word: when its
/// pattern is present, it is applied with probability `prob`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Rule {
    /// Replaces `from` by `to` at the given position (every occurrence for `any`).
    Replace {
        from: String,
        to: String,
        #[serde(default = "any")]
        at: Position,
        prob: f64,
    },
    /// Doubles the first character of the word that is in `chars`.
    Double { chars: String, prob: f64 },
}

fn any() -> Position {
    Position::Any
}

impl Rule {
    pub fn prob(&self) -> f64 {
        match self {
            Rule::Replace { prob, .. } | Rule::Double { prob, .. } => *prob,
        }
    }

    pub fn applies_to(&self, word: &str) -> bool {
        match self {
            Rule::Replace { from, to, at, .. } => {
                from != to
                    && !from.is_empty()
                    && match at {
                        Position::Initial => word.starts_with(from.as_str()),
                        Position::Final => word.ends_with(from.as_str()) && word.len() > from.len(),
                        Position::Any => word.contains(from.as_str()),
                    }
            }
            Rule::Double { chars, .. } => word.chars().any(|c| chars.contains(c)),
        }
    }

    /// The rewritten word; callers check [`Rule::applies_to`] first.
    pub fn rewrite(&self, word: &str) -> String {
        match self {
            Rule::Replace { from, to, at, .. } => match at {
                Position::Initial => format!("{to}{}", &word[from.len()..]),
                Position::Final => format!("{}{to}", &word[..word.len() - from.len()]),
                Position::Any => word.replace(from.as_str(), to),
            },
            Rule::Double { chars, .. } => {
                let mut out = String::with_capacity(word.len() + 1);
                let mut done = false;
                for c in word.chars() {
                    out.push(c);
                    if !done && chars.contains(c) {
                        out.push(c);
                        done = true;
                    }
                }
                out
            }
        }
    }
}

/// Ordered rewrite rules, read from a TOML file of `[[rule]]` tables.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    #[serde(default, rename = "rule")]
    pub rules: Vec<Rule>,
}

impl RuleSet {
    pub fn from_toml(text: &str) -> Result<Self> {
        let set: RuleSet = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        for r in &set.rules {
            if !(0.0..=1.0).contains(&r.prob()) {
                return Err(Error::Parse(format!(
                    "rule probability {} outside [0, 1]",
                    r.prob()
                )));
            }
        }
        Ok(set)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_error(path))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("rule sets always serialize")
    }

    /// Applies each rule in order with its own coin flip.
    pub fn corrupt(&self, word: &str, rng: &mut Rng) -> String {
        let mut current = word.to_owned();
        for rule in &self.rules {
            if rule.applies_to(&current) && rng.random::<f64>() < rule.prob() {
                current = rule.rewrite(&current);
            }
        }
        current
    }

    /// Default historical-looking corruptions used by the CLI and tests.
    pub fn historical() -> Self {
        let replace = |from: &str, to: &str, at, prob| Rule::Replace {
            from: from.into(),
            to: to.into(),
            at,
            prob,
        };
        RuleSet {
            rules: vec![
                replace("u", "v", Position::Initial, 0.8),
                replace("t", "th", Position::Initial, 0.5),
                replace("ei", "ey", Position::Any, 0.5),
                replace("k", "c", Position::Any, 0.4),
                replace("e", "", Position::Final, 0.4),
                Rule::Double {
                    chars: "nmlt".into(),
                    prob: 0.2,
                },
            ],
        }
    }

    /// Every probability multiplied by `factor` (clamped to 1).
    pub fn scaled(&self, factor: f64) -> Self {
        let rules = self
            .rules
            .iter()
            .cloned()
            .map(|mut r| {
                match &mut r {
                    Rule::Replace { prob, .. } | Rule::Double { prob, .. } => {
                        *prob = (*prob * factor).min(1.0)
                    }
                }
                r
            })
            .collect();
        RuleSet { rules }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticOptions {
    pub language: String,
    /// Distinct modern word forms.
    pub lexicon_size: usize,
    /// Normalization token pairs (running text, Zipf-distributed).
    pub tokens: usize,
    /// Pairs per auxiliary dataset.
    pub aux_size: usize,
    pub zipf_exponent: f64,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        Self {
            language: "xx".into(),
            lexicon_size: 2000,
            tokens: 6000,
            aux_size: 2000,
            zipf_exponent: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub lexicon: Vec<String>,
    pub normalization: TaskDataset,
    pub autoencoding: TaskDataset,
    pub g2p: TaskDataset,
    pub lemmatization: TaskDataset,
}

impl SyntheticCorpus {
    pub fn datasets(&self) -> [&TaskDataset; 4] {
        [
            &self.normalization,
            &self.autoencoding,
            &self.g2p,
            &self.lemmatization,
        ]
    }

    /// Writes one pair file per task as `<language>_<task>.tsv`.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(io_error(dir))?;
        let mut written = Vec::new();
        for ds in self.datasets() {
            let path = dir.join(format!("{}.tsv", ds.name));
            write_pairs(&path, &ds.pairs)?;
            written.push(path);
        }
        Ok(written)
    }
}

const ONSETS: [&str; 18] = [
    "b", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "w", "sch", "st", "br", "tr",
];
const NUCLEI: [&str; 8] = ["a", "e", "i", "o", "u", "ei", "au", "ie"];
const CODAS: [&str; 8] = ["", "", "n", "r", "s", "t", "ng", "ch"];
const SUFFIXES: [&str; 5] = ["en", "er", "es", "et", "st"];

fn sample_word(rng: &mut Rng) -> String {
    let syllables = rng.random_range(1..=3);
    let mut w = String::new();
    // about a fifth of words start with a vowel so initial rules have targets
    if rng.random::<f64>() < 0.2 {
        w.push_str(["u", "e", "a"].choose(rng).expect("nonempty"));
    }
    for _ in 0..syllables {
        w.push_str(ONSETS.choose(rng).expect("nonempty"));
        w.push_str(NUCLEI.choose(rng).expect("nonempty"));
        w.push_str(CODAS.choose(rng).expect("nonempty"));
    }
    if rng.random::<f64>() < 0.3 {
        w.push('e');
    }
    w
}

/// Deterministic grapheme-to-phoneme map: digraphs first, doubled letters collapse.
pub fn pseudo_phonemes(word: &str) -> String {
    const MULTI: [(&str, &str); 9] = [
        ("sch", "S"),
        ("ch", "x"),
        ("ng", "N"),
        ("ei", "aI"),
        ("ey", "aI"),
        ("au", "aU"),
        ("ie", "i:"),
        ("th", "t"),
        ("sh", "S"),
    ];
    let chars: Vec<char> = word.chars().collect();
    let mut out: Vec<String> = Vec::new();
    let mut i = 0;
    'outer: while i < chars.len() {
        let rest: String = chars[i..].iter().collect();
        for (g, p) in MULTI {
            if rest.starts_with(g) {
                out.push(p.to_owned());
                i += g.chars().count();
                continue 'outer;
            }
        }
        let c = chars[i];
        let phone = match c {
            'v' => "f".to_owned(),
            'w' => "v".to_owned(),
            'c' => "k".to_owned(),
            'e' if i + 1 == chars.len() && i > 0 => "@".to_owned(),
            other => other.to_string(),
        };
        if out.last() != Some(&phone) || c.is_ascii_digit() {
            out.push(phone);
        }
        i += 1;
    }
    out.join(" ")
}

/// Generates the four task datasets for one synthetic language.
pub fn generate_synthetic_corpus(
    seed: u64,
    options: &SyntheticOptions,
    rules: &RuleSet,
) -> Result<SyntheticCorpus> {
    if options.lexicon_size == 0 || options.tokens == 0 || options.aux_size == 0 {
        return Err(Error::Contract(
            "synthetic corpus sizes must be positive".into(),
        ));
    }
    let mut rng = seeded_rng(seed);
    let mut seen = HashSet::new();
    let mut lexicon = Vec::with_capacity(options.lexicon_size);
    let mut attempts = 0usize;
    while lexicon.len() < options.lexicon_size {
        let w = sample_word(&mut rng);
        if seen.insert(w.clone()) {
            lexicon.push(w);
        }
        attempts += 1;
        if attempts > options.lexicon_size * 1000 {
            return Err(Error::Contract(format!(
                "cannot draw {} distinct words from the syllable inventory",
                options.lexicon_size
            )));
        }
    }

    let weights: Vec<f64> = (1..=lexicon.len())
        .map(|r| 1.0 / (r as f64).powf(options.zipf_exponent))
        .collect();
    let zipf = WeightedIndex::new(&weights).map_err(|e| Error::Contract(e.to_string()))?;

    let lang = options.language.as_str();
    let name = |t: TaskKind| format!("{}_{}", lang.to_uppercase(), t.short());

    let norm_pairs = (0..options.tokens)
        .map(|_| {
            let modern = &lexicon[zipf.sample(&mut rng)];
            TokenPair::new(rules.corrupt(modern, &mut rng), modern.clone())
        })
        .collect();

    let aux_words: Vec<&String> = (0..options.aux_size)
        .map(|i| &lexicon[i % lexicon.len()])
        .collect();
    let autoenc = aux_words.iter().map(|w| TokenPair::new(*w, *w)).collect();
    let g2p = aux_words
        .iter()
        .map(|w| TokenPair::new(*w, pseudo_phonemes(w)))
        .collect();
    let lemma = aux_words
        .iter()
        .map(|w| {
            let suffix = SUFFIXES.choose(&mut rng).expect("nonempty");
            let stem = w.strip_suffix('e').unwrap_or(w);
            TokenPair::new(format!("{stem}{suffix}"), w.to_string())
        })
        .collect();

    Ok(SyntheticCorpus {
        normalization: TaskDataset::new(
            name(TaskKind::Normalization),
            TaskKind::Normalization,
            lang,
            norm_pairs,
        ),
        autoencoding: TaskDataset::new(
            name(TaskKind::Autoencoding),
            TaskKind::Autoencoding,
            lang,
            autoenc,
        ),
        g2p: TaskDataset::new(name(TaskKind::G2p), TaskKind::G2p, lang, g2p),
        lemmatization: TaskDataset::new(
            name(TaskKind::Lemmatization),
            TaskKind::Lemmatization,
            lang,
            lemma,
        ),
        lexicon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticOptions {
        SyntheticOptions {
            lexicon_size: 200,
            tokens: 500,
            aux_size: 100,
            ..Default::default()
        }
    }

    #[test]
    fn initial_replacement_with_certainty() {
        let rules = RuleSet {
            rules: vec![Rule::Replace {
                from: "u".into(),
                to: "v".into(),
                at: Position::Initial,
                prob: 1.0,
            }],
        };
        let mut rng = seeded_rng(0);
        assert_eq!(rules.corrupt("und", &mut rng), "vnd");
        assert_eq!(rules.corrupt("haus", &mut rng), "haus");
    }

    #[test]
    fn empty_rules_leave_words_unchanged() {
        let c = generate_synthetic_corpus(5, &small(), &RuleSet::default()).unwrap();
        assert!(c.normalization.pairs.iter().all(|p| p.source == p.target));
    }

    #[test]
    fn deterministic_given_seed() {
        let rules = RuleSet::historical();
        let a = generate_synthetic_corpus(9, &small(), &rules).unwrap();
        let b = generate_synthetic_corpus(9, &small(), &rules).unwrap();
        let c = generate_synthetic_corpus(10, &small(), &rules).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.normalization.pairs, c.normalization.pairs);
    }

    #[test]
    fn task_shapes() {
        let c = generate_synthetic_corpus(1, &small(), &RuleSet::historical()).unwrap();
        assert!(c.autoencoding.pairs.iter().all(|p| p.source == p.target));
        assert!(c
            .g2p
            .pairs
            .iter()
            .all(|p| !p.target.is_empty() && !p.target.contains("  ")));
        assert!(c
            .lemmatization
            .pairs
            .iter()
            .all(|p| p.source.len() > p.target.len() - usize::from(p.target.ends_with('e'))));
        assert_eq!(c.normalization.len(), 500);
    }

    #[test]
    fn phoneme_map() {
        assert_eq!(pseudo_phonemes("schein"), "S aI n");
        assert_eq!(pseudo_phonemes("hallo"), "h a l o");
        assert_eq!(pseudo_phonemes("tage"), "t a g @");
    }

    #[test]
    fn rule_file_round_trip() {
        let text = r#"
[[rule]]
kind = "replace"
from = "u"
to = "v"
at = "initial"
prob = 0.5

[[rule]]
kind = "double"
chars = "nm"
prob = 0.1
"#;
        let set = RuleSet::from_toml(text).unwrap();
        assert_eq!(set.rules.len(), 2);
        assert_eq!(RuleSet::from_toml(&set.to_toml()).unwrap(), set);
        assert!(
            RuleSet::from_toml("[[rule]]\nkind = \"double\"\nchars = \"a\"\nprob = 2.0\n").is_err()
        );
    }
}

//! Declarative experiment descriptions, read from TOML.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use normshare::data::TaskKind;
use normshare::evalkit::ProbeMetric;
use normshare::model::{HyperParams, SharingConfig};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{io_error, CliError, Result};

/// Smallest training size a spec may request.
pub const MIN_SIZE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

/// A requested training size: a token count or the whole training file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Size {
    Count(usize),
    Full,
}

impl<'de> Deserialize<'de> for Size {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(usize),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(n) => Ok(Size::Count(n)),
            Raw::Word(w) if w == "full" => Ok(Size::Full),
            Raw::Word(w) => Err(serde::de::Error::custom(format!(
                "size {w:?} is neither a count nor \"full\""
            ))),
        }
    }
}

impl fmt::Display for Size {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Size::Count(n) => write!(f, "{n}"),
            Size::Full => f.write_str("full"),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    pub language: String,
    pub train: PathBuf,
    pub dev: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuxSpec {
    pub task: TaskKind,
    pub language: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    /// Sharing configurations; "" is the single-task baseline.
    pub configs: Option<Vec<String>>,
    /// Auxiliary task sets combined with every non-empty config.
    pub aux_sets: Option<Vec<Vec<TaskKind>>>,
    pub sizes: Option<Vec<Size>>,
    pub seeds: Option<Vec<u64>>,
    pub max_epochs: usize,
    pub patience: usize,
    pub precision: Precision,
    /// Earlier sweep whose top configurations seed a learning curve.
    pub sweep_results: Option<PathBuf>,
    pub save_checkpoints: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            configs: None,
            aux_sets: None,
            sizes: None,
            seeds: None,
            max_epochs: 50,
            patience: 5,
            precision: Precision::F64,
            sweep_results: None,
            save_checkpoints: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZeroShotSection {
    /// Target languages; each gets its own model. Defaults to every
    /// language with normalization data.
    pub targets: Option<Vec<String>>,
    pub epochs: usize,
    pub samples_per_epoch: usize,
    pub samples_per_update: usize,
    /// Tokens taken from the start of every normalization training file.
    pub train_tokens: usize,
    /// Deliberately trains on excluded datasets; exercises the leakage guard.
    pub force_include: Vec<String>,
}

impl Default for ZeroShotSection {
    fn default() -> Self {
        Self {
            targets: None,
            epochs: 10,
            samples_per_epoch: 1000,
            samples_per_update: 10,
            train_tokens: 1000,
            force_include: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub tasks: Vec<TaskKind>,
    pub metric: ProbeMetric,
}

impl Default for ProbeSection {
    fn default() -> Self {
        Self {
            tasks: vec![
                TaskKind::Autoencoding,
                TaskKind::G2p,
                TaskKind::Lemmatization,
            ],
            metric: ProbeMetric::Accuracy,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticLanguage {
    pub code: String,
    pub seed: u64,
    /// Multiplier on every rule probability.
    #[serde(default = "one")]
    pub scale: f64,
    /// Number of normalization datasets drawn for this language.
    #[serde(default = "one_usize")]
    pub norm_sets: usize,
    pub rules: Option<PathBuf>,
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub train_tokens: usize,
    pub dev_tokens: usize,
    pub lexicon_size: usize,
    pub aux_size: usize,
    pub zipf_exponent: f64,
    pub languages: Vec<SyntheticLanguage>,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        Self {
            train_tokens: 5000,
            dev_tokens: 1000,
            lexicon_size: 2000,
            aux_size: 2000,
            zipf_exponent: 1.0,
            languages: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub out: Option<PathBuf>,
    #[serde(default, rename = "dataset")]
    pub datasets: Vec<DatasetSpec>,
    #[serde(default, rename = "auxiliary")]
    pub auxiliary: Vec<AuxSpec>,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub hyper: HyperParams,
    #[serde(default)]
    pub zero_shot: ZeroShotSection,
    pub probe: Option<ProbeSection>,
    pub synthetic: Option<SyntheticSection>,
}

impl ExperimentSpec {
    /// Parses `text`; relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut spec: ExperimentSpec =
            toml::from_str(text).map_err(|e| CliError::spec(e.to_string()))?;
        spec.resolve(base);
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.is_file() {
            return Err(CliError::spec(format!(
                "spec file {} does not exist",
                path.display()
            )));
        }
        let text = fs::read_to_string(path).map_err(io_error(path))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| match e {
            CliError::Spec(msgs) => CliError::Spec(
                msgs.into_iter()
                    .map(|m| format!("{}: {m}", path.display()))
                    .collect(),
            ),
            other => other,
        })
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(out) = &mut self.out {
            fix(out);
        }
        for d in &mut self.datasets {
            fix(&mut d.train);
            fix(&mut d.dev);
        }
        for a in &mut self.auxiliary {
            fix(&mut a.path);
        }
        if let Some(p) = &mut self.experiment.sweep_results {
            fix(p);
        }
        if let Some(s) = &mut self.synthetic {
            for l in &mut s.languages {
                if let Some(r) = &mut l.rules {
                    fix(r);
                }
            }
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.experiment.seeds.clone().unwrap_or_else(|| vec![1])
    }

    pub fn configs(&self) -> Result<Option<Vec<SharingConfig>>> {
        self.experiment
            .configs
            .as_ref()
            .map(|cs| {
                cs.iter()
                    .map(|c| SharingConfig::parse(c).map_err(|e| CliError::spec(e.to_string())))
                    .collect()
            })
            .transpose()
    }

    /// Auxiliary task sets, all three tasks together by default.
    pub fn aux_sets(&self) -> Vec<Vec<TaskKind>> {
        let mut sets = self.experiment.aux_sets.clone().unwrap_or_else(|| {
            vec![vec![
                TaskKind::Autoencoding,
                TaskKind::G2p,
                TaskKind::Lemmatization,
            ]]
        });
        for s in &mut sets {
            s.sort();
            s.dedup();
        }
        sets
    }

    /// Checks everything that can be checked without training; reports all
    /// problems at once.
    pub fn validate(&self, needs: Needs) -> Result<()> {
        let mut problems = Vec::new();
        if let Err(e) = self.hyper.validate() {
            problems.push(e.to_string());
        }
        if needs.datasets && self.datasets.is_empty() {
            problems.push("no [[dataset]] entries".into());
        }
        let mut names = BTreeSet::new();
        for d in &self.datasets {
            if !names.insert(d.name.as_str()) {
                problems.push(format!("dataset name {} is used twice", d.name));
            }
            for p in [&d.train, &d.dev] {
                if !p.is_file() {
                    problems.push(format!(
                        "dataset {}: {} does not exist",
                        d.name,
                        p.display()
                    ));
                }
            }
        }
        for a in &self.auxiliary {
            if !a.task.is_auxiliary() {
                problems.push(format!(
                    "[[auxiliary]] {} has non-auxiliary task {}",
                    a.path.display(),
                    a.task
                ));
            }
            if !a.path.is_file() {
                problems.push(format!(
                    "auxiliary {} data {} does not exist",
                    a.task,
                    a.path.display()
                ));
            }
        }
        let seeds = self.seeds();
        if seeds.is_empty() {
            problems.push("seed list is empty".into());
        }
        if seeds.iter().collect::<BTreeSet<_>>().len() != seeds.len() {
            problems.push(format!("seeds {seeds:?} are not distinct"));
        }
        for s in self.experiment.sizes.iter().flatten() {
            if let Size::Count(n) = s {
                if *n < MIN_SIZE {
                    problems.push(format!(
                        "training size {n} is below the minimum of {MIN_SIZE}"
                    ));
                }
            }
        }
        if let Err(CliError::Spec(msgs)) = self.configs() {
            problems.extend(msgs);
        }
        if self.experiment.max_epochs == 0 {
            problems.push("max_epochs must be positive".into());
        }
        if needs.aux {
            for set in self.aux_sets() {
                for d in &self.datasets {
                    for &task in &set {
                        if !task.is_auxiliary() {
                            problems.push(format!("aux set contains the main task {task}"));
                        } else if self.find_aux(task, &d.language).is_none() {
                            problems.push(format!(
                                "no {task} data for language {} (dataset {})",
                                d.language, d.name
                            ));
                        }
                    }
                }
            }
            if let Some(probe) = &self.probe {
                for d in &self.datasets {
                    for &task in &probe.tasks {
                        if self.find_aux(task, &d.language).is_none() {
                            problems.push(format!(
                                "probe needs {task} data for language {}",
                                d.language
                            ));
                        }
                    }
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Spec(problems))
        }
    }

    pub fn find_aux(&self, task: TaskKind, language: &str) -> Option<&AuxSpec> {
        self.auxiliary
            .iter()
            .find(|a| a.task == task && a.language.eq_ignore_ascii_case(language))
    }
}

/// Which parts of a spec a command relies on.
#[derive(Debug, Clone, Copy, Default)]
pub struct Needs {
    pub datasets: bool,
    pub aux: bool,
}

/// Short descriptor of an auxiliary task set, e.g. `autoenc+g2p`; `none` if empty.
pub fn aux_label(tasks: &[TaskKind]) -> String {
    if tasks.is_empty() {
        return "none".into();
    }
    let mut sorted = tasks.to_vec();
    sorted.sort();
    sorted
        .iter()
        .map(|t| t.short())
        .collect::<Vec<_>>()
        .join("+")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sizes_and_sections() {
        let spec = ExperimentSpec::parse(
            r#"
            [experiment]
            sizes = [100, "full"]
            seeds = [1, 2]
            aux_sets = [["g2p", "autoencoding"]]

            [hyper]
            hidden_dim = 32
            "#,
            Path::new("/tmp"),
        )
        .unwrap();
        assert_eq!(
            spec.experiment.sizes.clone().unwrap(),
            vec![Size::Count(100), Size::Full]
        );
        assert_eq!(spec.hyper.hidden_dim, 32);
        assert_eq!(spec.hyper.embed_dim, 60);
        assert_eq!(aux_label(&spec.aux_sets()[0]), "autoenc+g2p");
    }

    #[test]
    fn rejects_bad_sizes_and_duplicate_seeds() {
        let spec = ExperimentSpec::parse(
            "[experiment]\nsizes = [50]\nseeds = [3, 3]\n",
            Path::new("."),
        )
        .unwrap();
        let Err(CliError::Spec(problems)) = spec.validate(Needs::default()) else {
            panic!("expected a spec error")
        };
        assert_eq!(problems.len(), 2, "{problems:?}");
    }

    #[test]
    fn unknown_keys_are_errors() {
        assert!(matches!(
            ExperimentSpec::parse("[experiment]\nepochs = 3\n", Path::new(".")),
            Err(CliError::Spec(_))
        ));
    }
}

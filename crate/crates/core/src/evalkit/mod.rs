//! Decoding, accuracy metrics, and the analyses built on them.

mod analysis;
mod decode;

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::TaskDataset;
use crate::error::{io_error, Error, Result};

pub use analysis::{
    lcs_length, lcs_similarity, levenshtein_similarity, pearson_with_ci, probe_auxiliary_model,
    score, Correlation, ProbeMetric,
};
pub use decode::{argmax, greedy_decode, greedy_decode_batch, length_cap, predict};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub source: String,
    pub gold: String,
    pub hypothesis: String,
}

impl Prediction {
    pub fn is_correct(&self) -> bool {
        self.hypothesis == self.gold
    }
}

/// Count and correct count of one population.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub n: usize,
    pub correct: usize,
}

impl Cell {
    pub fn accuracy(&self) -> Option<f64> {
        (self.n > 0).then(|| 100.0 * self.correct as f64 / self.n as f64)
    }

    fn add(self, other: Cell) -> Cell {
        Cell {
            n: self.n + other.n,
            correct: self.correct + other.correct,
        }
    }
}

/// Predictions cross-classified by {known, unknown} × {identity gold, changed gold}.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub known_identity: Cell,
    pub known_changed: Cell,
    pub unknown_identity: Cell,
    pub unknown_changed: Cell,
}

impl Splits {
    pub fn known(&self) -> Cell {
        self.known_identity.add(self.known_changed)
    }

    pub fn unknown(&self) -> Cell {
        self.unknown_identity.add(self.unknown_changed)
    }

    pub fn identity(&self) -> Cell {
        self.known_identity.add(self.unknown_identity)
    }

    pub fn changed(&self) -> Cell {
        self.known_changed.add(self.unknown_changed)
    }

    pub fn total(&self) -> Cell {
        self.known().add(self.unknown())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub n: usize,
    pub accuracy: f64,
    pub identity_accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub splits: Option<Splits>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictions: Option<Vec<Prediction>>,
}

impl EvalReport {
    /// Report without splits; `accuracy` and `identity_accuracy` are percentages.
    pub fn new(
        dataset: impl Into<String>,
        n: usize,
        accuracy: f64,
        identity_accuracy: f64,
    ) -> Self {
        Self {
            dataset: dataset.into(),
            n,
            accuracy,
            identity_accuracy,
            splits: None,
            predictions: None,
        }
    }

    /// Scores `predictions` against their gold forms.
    pub fn from_predictions(
        dataset: impl Into<String>,
        predictions: Vec<Prediction>,
    ) -> Result<Self> {
        let accuracy = word_accuracy(&predictions)?;
        let identity = identity_accuracy(&predictions);
        Ok(Self {
            dataset: dataset.into(),
            n: predictions.len(),
            accuracy,
            identity_accuracy: identity,
            splits: None,
            predictions: Some(predictions),
        })
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut copy = self.clone();
        copy.predictions = None;
        let text = serde_json::to_string_pretty(&copy).map_err(|e| Error::Parse(e.to_string()))?;
        fs::write(path, text + "\n").map_err(io_error(path))
    }
}

/// Exact-match accuracy in percent.
pub fn word_accuracy(preds: &[Prediction]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::Contract("accuracy over zero predictions".into()));
    }
    let correct = preds.iter().filter(|p| p.is_correct()).count();
    Ok(100.0 * correct as f64 / preds.len() as f64)
}

fn identity_accuracy(preds: &[Prediction]) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    let same = preds.iter().filter(|p| p.source == p.gold).count();
    100.0 * same as f64 / preds.len() as f64
}

/// Accuracy of leaving every source unchanged; 0 for an empty dataset.
pub fn identity_baseline(ds: &TaskDataset) -> f64 {
    if ds.is_empty() {
        return 0.0;
    }
    let same = ds.pairs.iter().filter(|p| p.source == p.target).count();
    100.0 * same as f64 / ds.len() as f64
}

/// Token-weighted accuracy over the concatenation of all reports.
pub fn micro_average(reports: &[EvalReport]) -> Result<f64> {
    let total: usize = reports.iter().map(|r| r.n).sum();
    if total == 0 {
        return Err(Error::Contract("micro-average over zero tokens".into()));
    }
    let weighted: f64 = reports.iter().map(|r| r.accuracy * r.n as f64).sum();
    Ok(weighted / total as f64)
}

/// Relative reduction of the error rate `100 − acc`, in percent.
pub fn error_reduction(baseline_acc: f64, system_acc: f64) -> Result<f64> {
    if baseline_acc >= 100.0 {
        return Err(Error::Undefined(format!(
            "error reduction against a baseline of {baseline_acc}% (no errors to reduce)"
        )));
    }
    Ok(100.0 * (system_acc - baseline_acc) / (100.0 - baseline_acc))
}

/// Scores `preds` and cross-classifies them by whether the source was seen
/// in training and whether the gold form equals the source.
pub fn split_report(
    dataset: &str,
    preds: &[Prediction],
    train_sources: &HashSet<String>,
) -> Result<EvalReport> {
    let mut splits = Splits::default();
    for p in preds {
        let known = train_sources.contains(&p.source);
        let identity = p.source == p.gold;
        let cell = match (known, identity) {
            (true, true) => &mut splits.known_identity,
            (true, false) => &mut splits.known_changed,
            (false, true) => &mut splits.unknown_identity,
            (false, false) => &mut splits.unknown_changed,
        };
        cell.n += 1;
        cell.correct += usize::from(p.is_correct());
    }
    let mut report = EvalReport::from_predictions(dataset, preds.to_vec())?;
    report.splits = Some(splits);
    Ok(report)
}

/// Writes the three-column prediction dump (source, gold, hypothesis).
pub fn write_predictions(path: impl AsRef<Path>, preds: &[Prediction]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for p in preds {
        let _ = writeln!(out, "{}\t{}\t{}", p.source, p.gold, p.hypothesis);
    }
    fs::write(path, out).map_err(io_error(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(s: &str, g: &str, h: &str) -> Prediction {
        Prediction {
            source: s.into(),
            gold: g.into(),
            hypothesis: h.into(),
        }
    }

    #[test]
    fn accuracy_examples() {
        let all = vec![pred("a", "a", "a"); 3];
        assert_eq!(word_accuracy(&all).unwrap(), 100.0);
        let quarter = [
            pred("a", "b", "b"),
            pred("a", "b", "a"),
            pred("c", "d", "x"),
            pred("e", "f", ""),
        ];
        assert_eq!(word_accuracy(&quarter).unwrap(), 25.0);
        assert!(matches!(word_accuracy(&[]), Err(Error::Contract(_))));
    }

    #[test]
    fn micro_average_examples() {
        let r = [
            EvalReport::new("a", 10, 100.0, 0.0),
            EvalReport::new("b", 30, 0.0, 0.0),
        ];
        assert_eq!(micro_average(&r).unwrap(), 25.0);
        let eq = [
            EvalReport::new("a", 7, 40.0, 0.0),
            EvalReport::new("b", 7, 60.0, 0.0),
        ];
        assert!((micro_average(&eq).unwrap() - 50.0).abs() < 1e-12);
    }

    #[test]
    fn error_reduction_examples() {
        assert_eq!(error_reduction(50.0, 75.0).unwrap(), 50.0);
        assert!((error_reduction(66.95, 76.94).unwrap() - 30.23).abs() < 0.01);
        assert!((error_reduction(70.0, 65.0).unwrap() + 16.67).abs() < 0.01);
        assert_eq!(error_reduction(42.0, 42.0).unwrap(), 0.0);
        assert!(matches!(
            error_reduction(100.0, 90.0),
            Err(Error::Undefined(_))
        ));
    }

    #[test]
    fn split_examples() {
        let train: HashSet<String> = ["a".to_string()].into();
        let preds = [pred("a", "a", "a"), pred("b", "c", "b")];
        let r = split_report("x", &preds, &train).unwrap();
        let s = r.splits.unwrap();
        assert_eq!((s.known().n, s.unknown().n), (1, 1));
        assert_eq!(s.total().n, r.n);
        assert_eq!(s.known().accuracy(), Some(100.0));
        assert_eq!(s.unknown().accuracy(), Some(0.0));
    }
}

use numcore::Real;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{predict, word_accuracy, Prediction};
use crate::data::TaskDataset;
use crate::error::{Error, Result};
use crate::model::MultiTaskModel;

/// Sample correlation with a Fisher-z confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

/// Pearson r with a two-sided interval at `confidence`: atanh(r) ± z/√(n−3), mapped back by tanh.
pub fn pearson_with_ci(xs: &[f64], ys: &[f64], confidence: f64) -> Result<Correlation> {
    if xs.len() != ys.len() {
        return Err(Error::Contract(format!(
            "{} xs but {} ys",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len();
    if n < 3 {
        return Err(Error::Contract(format!(
            "correlation needs at least 3 points, got {n}"
        )));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::Contract(format!(
            "confidence {confidence} outside (0, 1)"
        )));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined(
            "correlation with a zero-variance variable".into(),
        ));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    if r.abs() == 1.0 {
        return Ok(Correlation { r, lo: r, hi: r, n });
    }
    let normal = Normal::standard();
    let z_crit = normal.inverse_cdf(0.5 + confidence / 2.0);
    let z = r.atanh();
    let half = z_crit / ((n - 3) as f64).sqrt();
    let (lo, hi) = if n == 3 {
        (-1.0, 1.0)
    } else {
        ((z - half).tanh(), (z + half).tanh())
    };
    Ok(Correlation { r, lo, hi, n })
}

/// Runs an auxiliary-task model on historical sources as though it were a
/// normalizer and returns its accuracy against the normalization gold.
pub fn probe_auxiliary_model<F: Real>(
    aux_model: &MultiTaskModel<F>,
    task: usize,
    norm: &TaskDataset,
) -> Result<f64> {
    let preds = predict(aux_model, task, &norm.pairs)?;
    word_accuracy(&preds)
}

/// Alternatives to exact match for probing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeMetric {
    Accuracy,
    Lcs,
    Levenshtein,
}

/// Mean score of `preds` in percent under `metric`.
pub fn score(preds: &[Prediction], metric: ProbeMetric) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::Contract("score over zero predictions".into()));
    }
    let per: fn(&str, &str) -> f64 = match metric {
        ProbeMetric::Accuracy => |a, b| f64::from(u8::from(a == b)),
        ProbeMetric::Lcs => lcs_similarity,
        ProbeMetric::Levenshtein => levenshtein_similarity,
    };
    let total: f64 = preds.iter().map(|p| per(&p.hypothesis, &p.gold)).sum();
    Ok(100.0 * total / preds.len() as f64)
}

/// Length of the longest common subsequence, over characters.
pub fn lcs_length(a: &str, b: &str) -> usize {
    let b: Vec<char> = b.chars().collect();
    let mut row = vec![0usize; b.len() + 1];
    for ca in a.chars() {
        let mut diag = 0;
        for (j, &cb) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if ca == cb { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// 2·LCS / (|a| + |b|); 1 for two empty strings.
pub fn lcs_similarity(a: &str, b: &str) -> f64 {
    let total = a.chars().count() + b.chars().count();
    if total == 0 {
        return 1.0;
    }
    2.0 * lcs_length(a, b) as f64 / total as f64
}

/// 1 − distance / max(|a|, |b|); 1 for two empty strings.
pub fn levenshtein_similarity(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - strsim::levenshtein(a, b) as f64 / longest as f64
}

use std::collections::BTreeMap;

use serde::Serialize;

use crate::results::{cmp_f64, ResultRow};

/// Mean performance of one sharing configuration over datasets and seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigRank {
    pub rank: usize,
    pub config: String,
    pub shared: usize,
    pub accuracy: f64,
    pub error_reduction: Option<f64>,
    pub runs: usize,
}

/// Configurations ordered by mean accuracy, best first; ties by name.
pub fn rank_configs(rows: &[ResultRow]) -> Vec<ConfigRank> {
    let mut groups: BTreeMap<&str, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(&r.config).or_default().push(r);
    }
    let mut ranks: Vec<ConfigRank> = groups
        .into_iter()
        .map(|(config, rs)| {
            let ers: Vec<f64> = rs.iter().filter_map(|r| r.error_reduction).collect();
            ConfigRank {
                rank: 0,
                config: config.to_owned(),
                shared: config.chars().count(),
                accuracy: rs.iter().map(|r| r.accuracy).sum::<f64>() / rs.len() as f64,
                error_reduction: (!ers.is_empty())
                    .then(|| ers.iter().sum::<f64>() / ers.len() as f64),
                runs: rs.len(),
            }
        })
        .collect();
    ranks.sort_by(|a, b| cmp_f64(b.accuracy, a.accuracy).then_with(|| a.config.cmp(&b.config)));
    for (i, r) in ranks.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    ranks
}

/// Linearly interpolated quantile of sorted values.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        }
    }
}

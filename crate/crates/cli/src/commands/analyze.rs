use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use normshare::evalkit::{pearson_with_ci, Correlation};
use serde::Serialize;

use super::curve::write_svg;
use super::sweep::write_csv;
use crate::error::{io_error, CliError, Result};
use crate::plot::{Chart, Series};
use crate::results::{load_rows, ProbeRow, ResultRow, SplitRow};

#[derive(Debug, Clone, Serialize)]
struct CorrelationRow {
    analysis: String,
    x: String,
    y: String,
    n: usize,
    r: f64,
    lo: f64,
    hi: f64,
}

#[derive(Debug, Clone, Serialize)]
struct SplitCurveRow {
    config: String,
    aux: String,
    size: usize,
    known_n: usize,
    known_acc: Option<f64>,
    unknown_n: usize,
    unknown_acc: Option<f64>,
    identity_n: usize,
    identity_acc: Option<f64>,
    changed_n: usize,
    changed_acc: Option<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn pct(correct: usize, n: usize) -> Option<f64> {
    (n > 0).then(|| 100.0 * correct as f64 / n as f64)
}

/// Per-dataset means of the error reductions in `rows`.
fn error_reduction_by_dataset<'a>(
    rows: impl Iterator<Item = &'a ResultRow>,
) -> BTreeMap<String, f64> {
    let mut by: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in rows {
        if let Some(er) = r.error_reduction {
            by.entry(r.dataset.clone()).or_default().push(er);
        }
    }
    by.into_iter().map(|(d, v)| (d, mean(&v))).collect()
}

/// Correlates per-dataset x and y values; `None` with a warning below 3 datasets.
fn correlate(
    name: &str,
    xs: &BTreeMap<String, f64>,
    ys: &BTreeMap<String, f64>,
    md: &mut String,
) -> Result<Option<Correlation>> {
    let points: Vec<(&String, f64, f64)> = xs
        .iter()
        .filter_map(|(d, &x)| ys.get(d).map(|&y| (d, x, y)))
        .collect();
    let _ = writeln!(md, "\n## {name}\n\n| dataset | x | y |\n|---|---|---|");
    for (d, x, y) in &points {
        let _ = writeln!(md, "| {d} | {x:.2} | {y:.2} |");
    }
    if points.len() < 3 {
        warn!(
            "{name}: only {} datasets, correlation skipped",
            points.len()
        );
        let _ = writeln!(
            md,
            "\nSkipped: {} datasets, at least 3 needed.",
            points.len()
        );
        return Ok(None);
    }
    let x: Vec<f64> = points.iter().map(|p| p.1).collect();
    let y: Vec<f64> = points.iter().map(|p| p.2).collect();
    match pearson_with_ci(&x, &y, 0.95) {
        Ok(c) => {
            let _ = writeln!(
                md,
                "\nr = {:.3}, 95% CI [{:.3}, {:.3}], n = {}",
                c.r, c.lo, c.hi, c.n
            );
            Ok(Some(c))
        }
        Err(e) => {
            warn!("{name}: {e}");
            let _ = writeln!(md, "\nSkipped: {e}");
            Ok(None)
        }
    }
}

/// Reads `results.csv`, and `probe.csv` and `splits.csv` when present, and
/// writes `correlations.csv`, `split_curves.csv`, `known_unknown.svg` and
/// `analysis.md` to `out` (default: the results directory).
pub fn analyze(results: &Path, out: Option<&Path>) -> Result<()> {
    let results_csv = results.join("results.csv");
    if !results_csv.is_file() {
        return Err(CliError::spec(format!(
            "{} does not exist",
            results_csv.display()
        )));
    }
    let out = out.unwrap_or(results);
    fs::create_dir_all(out).map_err(io_error(out))?;
    let rows: Vec<ResultRow> = load_rows(&results_csv)?;
    let probes: Vec<ProbeRow> = match results.join("probe.csv") {
        p if p.is_file() => load_rows(&p)?,
        _ => Vec::new(),
    };
    let splits: Vec<SplitRow> = match results.join("splits.csv") {
        p if p.is_file() => load_rows(&p)?,
        _ => Vec::new(),
    };

    let mut md = String::from("# Analysis\n\nError reductions are relative to the single-task row of the same dataset, size and seed, averaged per dataset.\n");
    let mut table = Vec::new();

    let mut identity: BTreeMap<String, f64> = BTreeMap::new();
    for r in &rows {
        identity.insert(r.dataset.clone(), r.identity);
    }
    let er_all = error_reduction_by_dataset(rows.iter());
    let name = "identity baseline vs error reduction";
    if let Some(c) = correlate(name, &identity, &er_all, &mut md)? {
        table.push(CorrelationRow {
            analysis: name.into(),
            x: "identity".into(),
            y: "error_reduction (all multi-task rows)".into(),
            n: c.n,
            r: c.r,
            lo: c.lo,
            hi: c.hi,
        });
    }

    let mut by_task: BTreeMap<(String, String), BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for p in &probes {
        by_task
            .entry((p.task.clone(), p.metric.clone()))
            .or_default()
            .entry(p.dataset.clone())
            .or_default()
            .push(p.score);
    }
    for ((task, metric), per_dataset) in by_task {
        let xs: BTreeMap<String, f64> = per_dataset
            .into_iter()
            .map(|(d, v)| (d, mean(&v)))
            .collect();
        // rows trained with exactly this auxiliary task; otherwise any set containing it
        let exact = error_reduction_by_dataset(rows.iter().filter(|r| r.aux == task));
        let (ys, y_label) = if exact.is_empty() {
            (
                error_reduction_by_dataset(
                    rows.iter().filter(|r| r.aux.split('+').any(|t| t == task)),
                ),
                format!("error_reduction (aux sets containing {task})"),
            )
        } else {
            (exact, format!("error_reduction (aux {task})"))
        };
        let name = format!("{task} probe ({metric}) vs error reduction");
        if let Some(c) = correlate(&name, &xs, &ys, &mut md)? {
            table.push(CorrelationRow {
                analysis: name,
                x: format!("probe_{metric}"),
                y: y_label,
                n: c.n,
                r: c.r,
                lo: c.lo,
                hi: c.hi,
            });
        }
    }
    write_csv(&out.join("correlations.csv"), &table)?;

    let mut curves: BTreeMap<(String, String, usize), [usize; 8]> = BTreeMap::new();
    for s in &splits {
        let c = curves
            .entry((s.config.clone(), s.aux.clone(), s.size))
            .or_default();
        for (slot, v) in c.iter_mut().zip([
            s.known_n,
            s.known_correct,
            s.unknown_n,
            s.unknown_correct,
            s.identity_n,
            s.identity_correct,
            s.changed_n,
            s.changed_correct,
        ]) {
            *slot += v;
        }
    }
    let curve_rows: Vec<SplitCurveRow> = curves
        .into_iter()
        .map(|((config, aux, size), c)| SplitCurveRow {
            config,
            aux,
            size,
            known_n: c[0],
            known_acc: pct(c[1], c[0]),
            unknown_n: c[2],
            unknown_acc: pct(c[3], c[2]),
            identity_n: c[4],
            identity_acc: pct(c[5], c[4]),
            changed_n: c[6],
            changed_acc: pct(c[7], c[6]),
        })
        .collect();
    write_csv(&out.join("split_curves.csv"), &curve_rows)?;
    let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in &curve_rows {
        let label = if r.config.is_empty() {
            "single".to_owned()
        } else {
            format!("{} [{}]", r.config, r.aux)
        };
        for (part, acc) in [
            ("known", r.known_acc),
            ("unknown", r.unknown_acc),
            ("identity", r.identity_acc),
            ("changed", r.changed_acc),
        ] {
            if let Some(a) = acc {
                series
                    .entry(format!("{label} {part}"))
                    .or_default()
                    .push((r.size as f64, a));
            }
        }
    }
    let chart = Chart {
        title: "Accuracy on known/unknown and identity/changed tokens".into(),
        x_label: "training tokens (log scale)".into(),
        y_label: "word accuracy (%)".into(),
        log_x: true,
        series: series
            .into_iter()
            .map(|(label, points)| Series { label, points })
            .collect(),
    };
    write_svg(&out.join("known_unknown.svg"), &chart)?;
    if splits.is_empty() {
        md.push_str("\n## Split curves\n\nNo splits.csv found.\n");
    } else {
        let _ = writeln!(
            md,
            "\n## Split curves\n\n{} (config, aux, size) groups pooled over datasets and seeds; see split_curves.csv.",
            curve_rows.len()
        );
    }
    fs::write(out.join("analysis.md"), &md).map_err(io_error(out.join("analysis.md")))?;
    print!("{md}");
    Ok(())
}

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use unicode_normalization::UnicodeNormalization;

use super::{TaskDataset, TaskKind, TokenPair};
use crate::error::{io_error, Error, Result};

/// Reads a tab-separated pair file.
///
/// Lines starting with `#` and blank lines are skipped. Autoencoding files may
/// list one word per line. Fields are NFC-normalized and trimmed; auxiliary
/// pairs whose words contain inner whitespace are dropped (g2p targets are
/// phoneme sequences and keep their spaces). The dataset name is the file stem.
pub fn load_pairs(path: impl AsRef<Path>, task: TaskKind, language: &str) -> Result<TaskDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_error(path))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| language.to_owned());
    let pairs = parse_pairs(&text, task, path)?;
    Ok(TaskDataset::new(name, task, language, pairs))
}

/// Parses pair-file text; `origin` is only used in error messages.
pub fn parse_pairs(text: &str, task: TaskKind, origin: &Path) -> Result<Vec<TokenPair>> {
    let format_error = |line: usize, message: String| Error::Format {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let (source, target) = match (fields.as_slice(), task) {
            ([word], TaskKind::Autoencoding) => (clean(word), clean(word)),
            ([source, target], _) => (clean(source), clean(target)),
            _ => {
                return Err(format_error(
                    line_no,
                    format!("expected 2 tab-separated columns, found {}", fields.len()),
                ))
            }
        };
        if task == TaskKind::Autoencoding && source != target {
            return Err(format_error(
                line_no,
                format!("autoencoding pair differs: {source:?} vs {target:?}"),
            ));
        }
        if task.is_auxiliary() {
            let inner_space = |s: &str| s.is_empty() || s.chars().any(char::is_whitespace);
            if inner_space(&source)
                || (task != TaskKind::G2p && inner_space(&target))
                || target.is_empty()
            {
                continue;
            }
        } else if source.is_empty() || target.is_empty() {
            return Err(format_error(line_no, "empty field".into()));
        }
        pairs.push(TokenPair::new(source, target));
    }
    if pairs.is_empty() {
        return Err(Error::EmptyFile(origin.to_path_buf()));
    }
    Ok(pairs)
}

fn clean(field: &str) -> String {
    field.trim().nfc().collect()
}

/// Renders pairs in the pair-file format, one `source\ttarget` line each.
pub fn serialize_pairs(pairs: &[TokenPair]) -> String {
    let mut out = String::with_capacity(pairs.len() * 16);
    for p in pairs {
        let _ = writeln!(out, "{}\t{}", p.source, p.target);
    }
    out
}

pub fn write_pairs(path: impl AsRef<Path>, pairs: &[TokenPair]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, serialize_pairs(pairs)).map_err(io_error(path))
}

/// The first `n` pairs in file order.
pub fn truncate(ds: &TaskDataset, n: usize) -> TaskDataset {
    ds.with_pairs(ds.pairs.iter().take(n).cloned().collect())
}

/// Deterministic prefix split: the first ⌈ratio·n⌉ pairs train, the rest validate.
pub fn split_train_validation(ds: &TaskDataset, ratio: f64) -> Result<(TaskDataset, TaskDataset)> {
    if ds.len() < 10 {
        return Err(Error::Contract(format!(
            "{} has {} pairs; at least 10 are needed for a validation split",
            ds.name,
            ds.len()
        )));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Contract(format!(
            "split ratio {ratio} outside (0, 1)"
        )));
    }
    // 0.9 * 10 is 9.000000000000002 in binary; the slack keeps the ceiling honest
    let cut = ((ds.len() as f64 * ratio) - 1e-9).ceil() as usize;
    let cut = cut.clamp(1, ds.len() - 1);
    let (train, val) = ds.pairs.split_at(cut);
    Ok((ds.with_pairs(train.to_vec()), ds.with_pairs(val.to_vec())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, task: TaskKind) -> Result<Vec<TokenPair>> {
        parse_pairs(text, task, Path::new("test.tsv"))
    }

    fn dataset(n: usize) -> TaskDataset {
        let pairs = (0..n)
            .map(|i| TokenPair::new(format!("s{i}"), format!("t{i}")))
            .collect();
        TaskDataset::new("x", TaskKind::Normalization, "de", pairs)
    }

    #[test]
    fn two_column_line() {
        let p = parse("vnd\tund\n", TaskKind::Normalization).unwrap();
        assert_eq!(p, vec![TokenPair::new("vnd", "und")]);
    }

    #[test]
    fn one_column_autoencoding() {
        let p = parse("haus\n\n# comment\nbaum\n", TaskKind::Autoencoding).unwrap();
        assert_eq!(
            p,
            vec![
                TokenPair::new("haus", "haus"),
                TokenPair::new("baum", "baum")
            ]
        );
    }

    #[test]
    fn three_columns_report_the_line() {
        let err = parse("a\tb\n\nx\ty\tz\n", TaskKind::Normalization).unwrap_err();
        match err {
            Error::Format { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn one_column_outside_autoencoding_is_malformed() {
        assert!(matches!(
            parse("haus\n", TaskKind::Lemmatization),
            Err(Error::Format { line: 1, .. })
        ));
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(
            parse("\n# only\n", TaskKind::Normalization),
            Err(Error::EmptyFile(_))
        ));
    }

    #[test]
    fn aux_cleaning() {
        let text = "  gehen \tgehen\nNew York\tNew York\nhaus\th aU s\n";
        let lemma = parse(text, TaskKind::Lemmatization).unwrap();
        assert_eq!(lemma.len(), 1);
        assert_eq!(lemma[0], TokenPair::new("gehen", "gehen"));
        let g2p = parse(text, TaskKind::G2p).unwrap();
        assert_eq!(g2p.last().unwrap().target, "h aU s");
    }

    #[test]
    fn nfc_applied() {
        let p = parse("u\u{0308}ber\tüber\n", TaskKind::Normalization).unwrap();
        assert_eq!(p[0].source, "über");
    }

    #[test]
    fn autoencoding_mismatch_rejected() {
        assert!(parse("a\tb\n", TaskKind::Autoencoding).is_err());
    }

    #[test]
    fn truncation_keeps_prefix() {
        let ds = dataset(50);
        assert_eq!(truncate(&ds, 10).pairs, ds.pairs[..10]);
        assert_eq!(truncate(&ds, 500), ds);
    }

    #[test]
    fn split_sizes() {
        for (n, train) in [(1000, 900), (10, 9), (100, 90), (11, 10)] {
            let (t, v) = split_train_validation(&dataset(n), 0.9).unwrap();
            assert_eq!((t.len(), v.len()), (train, n - train));
        }
        assert!(matches!(
            split_train_validation(&dataset(9), 0.9),
            Err(Error::Contract(_))
        ));
    }
}

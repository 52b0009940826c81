//! Keyed, append-only result tables written with temp-then-rename.

use std::cmp::Ordering;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{csv_error, io_error, CliError, Result};

/// One completed (dataset, config, aux set, size, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub config: String,
    pub aux: String,
    pub size: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub identity: f64,
    /// Relative to the single-task row of the same dataset, size and seed.
    pub error_reduction: Option<f64>,
}

/// Wall-clock cost of one cell; kept apart so result files stay reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub dataset: String,
    pub config: String,
    pub aux: String,
    pub size: usize,
    pub seed: u64,
    pub seconds: f64,
}

/// Accuracy of an auxiliary-task model run as a normalizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub dataset: String,
    pub task: String,
    pub seed: u64,
    pub metric: String,
    pub score: f64,
    pub identity: f64,
}

/// Known/unknown × identity/changed counts for one cell's dev predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRow {
    pub dataset: String,
    pub config: String,
    pub aux: String,
    pub size: usize,
    pub seed: u64,
    pub known_n: usize,
    pub known_correct: usize,
    pub unknown_n: usize,
    pub unknown_correct: usize,
    pub identity_n: usize,
    pub identity_correct: usize,
    pub changed_n: usize,
    pub changed_correct: usize,
}

/// Rows with a unique key and a canonical order.
pub trait Keyed: Serialize + DeserializeOwned + Clone {
    type Key: Ord + Clone + std::fmt::Debug;
    fn key(&self) -> Self::Key;
}

impl Keyed for ResultRow {
    type Key = (String, String, String, usize, u64);
    fn key(&self) -> Self::Key {
        (
            self.dataset.clone(),
            self.config.clone(),
            self.aux.clone(),
            self.size,
            self.seed,
        )
    }
}

impl Keyed for SplitRow {
    type Key = (String, String, String, usize, u64);
    fn key(&self) -> Self::Key {
        (
            self.dataset.clone(),
            self.config.clone(),
            self.aux.clone(),
            self.size,
            self.seed,
        )
    }
}

impl Keyed for ProbeRow {
    type Key = (String, String, u64, String);
    fn key(&self) -> Self::Key {
        (
            self.dataset.clone(),
            self.task.clone(),
            self.seed,
            self.metric.clone(),
        )
    }
}

/// A CSV table kept sorted by key. Rows can be added but never replaced,
/// and the file is rewritten atomically after every addition, so its
/// contents depend only on the set of completed cells.
#[derive(Debug)]
pub struct Table<R: Keyed> {
    path: PathBuf,
    rows: Vec<R>,
}

impl<R: Keyed> Table<R> {
    /// Opens `path`, reading any rows already there.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let rows = if path.exists() {
            read_rows(&path)?
        } else {
            Vec::new()
        };
        let mut table = Self { path, rows };
        table.rows.sort_by_key(Keyed::key);
        if let Some(w) = table.rows.windows(2).find(|w| w[0].key() == w[1].key()) {
            return Err(CliError::Results {
                path: table.path,
                message: format!("duplicate cell {:?}", w[0].key()),
            });
        }
        Ok(table)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn rows(&self) -> &[R] {
        &self.rows
    }

    pub fn get(&self, key: &R::Key) -> Option<&R> {
        self.rows
            .binary_search_by(|r| r.key().cmp(key))
            .ok()
            .map(|i| &self.rows[i])
    }

    pub fn contains(&self, key: &R::Key) -> bool {
        self.get(key).is_some()
    }

    /// Adds a row for a new cell and persists the table.
    pub fn insert(&mut self, row: R) -> Result<()> {
        let key = row.key();
        match self.rows.binary_search_by(|r| r.key().cmp(&key)) {
            Ok(_) => Err(CliError::Results {
                path: self.path.clone(),
                message: format!("cell {key:?} already has a result"),
            }),
            Err(pos) => {
                self.rows.insert(pos, row);
                self.save()
            }
        }
    }

    /// Inserts `row`, replacing any row with the same key.
    pub fn upsert(&mut self, row: R) -> Result<()> {
        let key = row.key();
        match self.rows.binary_search_by(|r| r.key().cmp(&key)) {
            Ok(pos) => self.rows[pos] = row,
            Err(pos) => self.rows.insert(pos, row),
        }
        self.save()
    }

    fn save(&self) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).map_err(csv_error(&self.path))?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Results {
            path: self.path.clone(),
            message: e.to_string(),
        })?;
        write_atomic(&self.path, &bytes)
    }
}

fn read_rows<R: DeserializeOwned>(path: &Path) -> Result<Vec<R>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_error(path))?;
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<R>, _>>()
        .map_err(csv_error(path))
}

/// Reads a result table without taking ownership of the file.
pub fn load_rows<R: Keyed>(path: impl AsRef<Path>) -> Result<Vec<R>> {
    Ok(Table::<R>::open(path.as_ref().to_path_buf())?.rows)
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_error(dir))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_error(&tmp))?;
    fs::rename(&tmp, path).map_err(io_error(path))
}

/// Appends one timing line, writing the header for a new file.
pub fn append_timing(path: &Path, row: &TimingRow) -> Result<()> {
    let fresh = !path.exists();
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_error(path))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(fresh)
        .from_writer(Vec::new());
    w.serialize(row).map_err(csv_error(path))?;
    let bytes = w.into_inner().map_err(|e| CliError::Results {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    file.write_all(&bytes).map_err(io_error(path))
}

/// Total order on floats for sorting reports; NaN sorts last.
pub fn cmp_f64(a: f64, b: f64) -> Ordering {
    a.partial_cmp(&b)
        .unwrap_or_else(|| a.is_nan().cmp(&b.is_nan()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(dataset: &str, size: usize, acc: f64) -> ResultRow {
        ResultRow {
            dataset: dataset.into(),
            config: "SEADP".into(),
            aux: "autoenc".into(),
            size,
            seed: 1,
            accuracy: acc,
            identity: 50.0,
            error_reduction: None,
        }
    }

    #[test]
    fn file_contents_do_not_depend_on_insertion_order() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        let rows = [
            row("EN", 1000, 70.0),
            row("DE", 100, 40.5),
            row("EN", 100, 12.25),
        ];
        let mut ta = Table::open(&a).unwrap();
        for r in &rows {
            ta.insert(r.clone()).unwrap();
        }
        let mut tb = Table::open(&b).unwrap();
        for r in rows.iter().rev() {
            tb.insert(r.clone()).unwrap();
        }
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        let back: Vec<ResultRow> = load_rows(&a).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[0].dataset, "DE");
    }

    #[test]
    fn a_cell_cannot_be_written_twice() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Table::open(dir.path().join("r.csv")).unwrap();
        t.insert(row("EN", 100, 1.0)).unwrap();
        assert!(t.insert(row("EN", 100, 2.0)).is_err());
        let reopened: Table<ResultRow> = Table::open(dir.path().join("r.csv")).unwrap();
        assert_eq!(reopened.rows()[0].accuracy, 1.0);
    }
}

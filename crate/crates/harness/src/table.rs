//! Result tables and their CSV / JSON files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// One metric of one sweep cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub eta: Option<f64>,
    pub model: String,
    pub sampler: String,
    pub c: usize,
    pub metric: String,
    pub value: f64,
    /// Mean wall time of the fit alone.
    pub elapsed_seconds: f64,
    /// Mean wall time of column selection.
    pub sampling_seconds: f64,
    pub repeats: usize,
    /// Base seed and the derivation path of the per-repeat streams.
    pub seeds: String,
}

impl ResultRow {
    pub const COLUMNS: [&'static str; 11] = [
        "dataset",
        "eta",
        "model",
        "sampler",
        "c",
        "metric",
        "value",
        "elapsed_seconds",
        "sampling_seconds",
        "repeats",
        "seeds",
    ];

    /// The row with its timing columns zeroed, for determinism checks.
    pub fn without_timing(&self) -> ResultRow {
        ResultRow {
            elapsed_seconds: 0.0,
            sampling_seconds: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellFailure {
    pub cell: String,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<CellFailure>,
}

impl Table {
    pub fn rows_for<'a>(
        &'a self,
        model: &'a str,
        metric: &'a str,
    ) -> impl Iterator<Item = &'a ResultRow> + 'a {
        self.rows
            .iter()
            .filter(move |r| r.model == model && r.metric == metric)
    }

    /// Lists the non-timing differences between two tables.
    pub fn differences(&self, other: &Table) -> Vec<String> {
        let mut out = Vec::new();
        if self.rows.len() != other.rows.len() {
            out.push(format!(
                "row count {} vs {}",
                self.rows.len(),
                other.rows.len()
            ));
        }
        for (i, (a, b)) in self.rows.iter().zip(&other.rows).enumerate() {
            let (a, b) = (a.without_timing(), b.without_timing());
            if a != b {
                out.push(format!("row {i}: {a:?} vs {b:?}"));
            }
        }
        if self.failures != other.failures {
            out.push(format!(
                "failures {:?} vs {:?}",
                self.failures, other.failures
            ));
        }
        out
    }
}

pub fn write_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    w.write_record(ResultRow::COLUMNS)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().ne(ResultRow::COLUMNS) {
        return Err(HarnessError::Other(format!(
            "{}: unexpected columns {headers:?}",
            path.display()
        )));
    }
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn write_json(table: &Table, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(table)?;
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

pub fn read_json(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes `<stem>.csv` (rows) and `<stem>.json` (rows and failures) into `dir`.
pub fn emit(table: &Table, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    write_csv(&table.rows, &csv_path)?;
    write_json(table, &json_path)?;
    Ok(vec![csv_path, json_path])
}

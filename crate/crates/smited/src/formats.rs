//! CSV datasets, loss logs and embedding dumps.

use std::fs;
use std::io::Write;
use std::path::Path;

use smited_core::training::LossRecord;

use crate::error::{Error, Result};

/// A labelled dataset: SMILES plus one or more numeric target columns.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledData {
    pub smiles: Vec<String>,
    pub columns: Vec<String>,
    /// Row-major, `columns.len()` values per molecule.
    pub values: Vec<f64>,
}

impl LabeledData {
    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().skip(j).step_by(self.width()).copied()
    }
}

/// Reads a CSV with a `smiles` column. `targets` selects target columns by
/// name; when empty every other column is a target.
pub fn read_labeled(path: &Path, targets: &[String]) -> Result<LabeledData> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::format(path, e))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::format(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let s_col = header
        .iter()
        .position(|h| h == "smiles")
        .ok_or_else(|| Error::format(path, "no smiles column"))?;
    let cols: Vec<usize> = if targets.is_empty() {
        (0..header.len()).filter(|&j| j != s_col).collect()
    } else {
        targets
            .iter()
            .map(|t| {
                header
                    .iter()
                    .position(|h| h == t)
                    .ok_or_else(|| Error::format(path, format!("no column {t}")))
            })
            .collect::<Result<_>>()?
    };
    if cols.is_empty() {
        return Err(Error::format(path, "no target columns"));
    }
    let mut data = LabeledData {
        smiles: Vec::new(),
        columns: cols.iter().map(|&j| header[j].clone()).collect(),
        values: Vec::new(),
    };
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, e))?;
        data.smiles
            .push(rec.get(s_col).unwrap_or_default().trim().to_string());
        for &j in &cols {
            let cell = rec.get(j).unwrap_or_default().trim();
            let v: f64 = cell.parse().map_err(|_| {
                Error::format(
                    path,
                    format!("row {}: {} = {cell:?} is not a number", n + 2, header[j]),
                )
            })?;
            data.values.push(v);
        }
    }
    if data.smiles.is_empty() {
        return Err(Error::format(path, "no rows"));
    }
    Ok(data)
}

/// Class labels from a single column of non-negative integers.
pub fn class_labels(data: &LabeledData, path: &Path) -> Result<Vec<usize>> {
    if data.width() != 1 {
        return Err(Error::Usage(format!(
            "classification takes one target column, {} given",
            data.width()
        )));
    }
    data.values
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::format(
                    path,
                    format!("class label {v} is not a non-negative integer"),
                ))
            }
        })
        .collect()
}

pub fn loss_log_csv(log: &[LossRecord]) -> String {
    let mut s = String::from("step,phase,objective,loss\n");
    for r in log {
        s.push_str(&format!(
            "{},{},{},{}\n",
            r.step,
            r.phase,
            r.objective.name(),
            r.loss
        ));
    }
    s
}

pub fn embeddings_csv<T: std::fmt::Display>(smiles: &[String], rows: &[Vec<T>]) -> String {
    let width = rows.first().map_or(0, Vec::len);
    let mut s = String::from("smiles");
    for j in 0..width {
        s.push_str(&format!(",e{j}"));
    }
    s.push('\n');
    for (m, r) in smiles.iter().zip(rows) {
        s.push_str(m);
        for v in r {
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| Error::format(path, e))?;
    f.write_all(b"\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}

/// Two-column `name  value` table.
pub fn table(rows: &[(&str, String)]) -> String {
    let w = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    rows.iter()
        .map(|(k, v)| format!("{k:<w$}  {v}\n"))
        .collect()
}

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An n×p numeric design with named columns and a length-n response.
///
/// Features are stored column-major; every learner and test in this crate
/// walks columns, not rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    columns: Vec<Vec<f64>>,
    names: Vec<String>,
    response: Vec<f64>,
}

impl Dataset {
    pub fn new(columns: Vec<Vec<f64>>, names: Vec<String>, response: Vec<f64>) -> Result<Self> {
        let n = response.len();
        if n < 2 {
            return Err(Error::DataShape(format!("need at least 2 rows, got {n}")));
        }
        if columns.is_empty() {
            return Err(Error::DataShape("need at least 1 feature".into()));
        }
        if names.len() != columns.len() {
            return Err(Error::DataShape(format!(
                "{} feature names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(Error::DataShape(format!("duplicate feature name {name:?}")));
            }
        }
        for (j, col) in columns.iter().enumerate() {
            if col.len() != n {
                return Err(Error::DataShape(format!(
                    "column {:?} has {} rows, response has {n}",
                    names[j],
                    col.len()
                )));
            }
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data {
                    row: i + 1,
                    column: names[j].clone(),
                    message: "non-finite value".into(),
                });
            }
        }
        if let Some(i) = response.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data {
                row: i + 1,
                column: "<response>".into(),
                message: "non-finite value".into(),
            });
        }
        Ok(Self {
            columns,
            names,
            response,
        })
    }

    /// Builds a dataset from row-major features with default names `X1..Xp`.
    pub fn from_rows(rows: &[Vec<f64>], response: Vec<f64>) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::DataShape("ragged feature rows".into()));
        }
        let columns = (0..p).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
        Self::new(columns, default_names(p), response)
    }

    pub fn n(&self) -> usize {
        self.response.len()
    }

    pub fn p(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn feature_names(&self) -> &[String] {
        &self.names
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Row subset, keeping column order.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|&i| c[i]).collect())
                .collect(),
            names: self.names.clone(),
            response: rows.iter().map(|&i| self.response[i]).collect(),
        }
    }

    /// Drops feature `j`; when `as_response` is set, that column becomes the response.
    pub fn without_feature(&self, j: usize, as_response: bool) -> Result<Dataset> {
        if self.p() < 2 {
            return Err(Error::invalid("cannot drop the only feature"));
        }
        let mut columns = self.columns.clone();
        let mut names = self.names.clone();
        let col = columns.remove(j);
        names.remove(j);
        let response = if as_response { col } else { self.response.clone() };
        Ok(Dataset {
            columns,
            names,
            response,
        })
    }

    pub fn with_response(&self, response: Vec<f64>) -> Result<Dataset> {
        Dataset::new(self.columns.clone(), self.names.clone(), response)
    }

    /// Reads a headered, comma-separated file; `response` names the target column.
    pub fn read_csv(path: impl AsRef<Path>, response: &str) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::read_csv_from(file, response)
    }

    pub fn read_csv_from<R: Read>(reader: R, response: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        let target = header
            .iter()
            .position(|h| h == response)
            .ok_or_else(|| Error::DataShape(format!("response column {response:?} not found in header")))?;
        let feature_cols: Vec<usize> = (0..header.len()).filter(|&c| c != target).collect();
        let mut columns = vec![Vec::new(); feature_cols.len()];
        let mut y = Vec::new();
        for (r, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != header.len() {
                return Err(Error::Data {
                    row: r + 1,
                    column: "*".into(),
                    message: format!("expected {} fields, found {}", header.len(), record.len()),
                });
            }
            let parse = |c: usize| -> Result<f64> {
                let raw = &record[c];
                raw.parse::<f64>().map_err(|_| Error::Data {
                    row: r + 1,
                    column: header[c].clone(),
                    message: format!("cannot parse {raw:?} as a number"),
                })
            };
            y.push(parse(target)?);
            for (slot, &c) in columns.iter_mut().zip(&feature_cols) {
                slot.push(parse(c)?);
            }
        }
        let names = feature_cols.iter().map(|&c| header[c].clone()).collect();
        Self::new(columns, names, y)
    }

    /// Writes features then the response column named `response_name`.
    pub fn write_csv<W: Write>(&self, writer: W, response_name: &str) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.names.iter().map(String::as_str).collect();
        header.push(response_name);
        w.write_record(&header)?;
        let mut buf = Vec::with_capacity(self.p() + 1);
        for i in 0..self.n() {
            buf.clear();
            buf.extend(self.columns.iter().map(|c| c[i].to_string()));
            buf.push(self.response[i].to_string());
            w.write_record(&buf)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn default_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("X{j}")).collect()
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Unbiased sample variance; 0 for fewer than two values.
pub(crate) fn sample_variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

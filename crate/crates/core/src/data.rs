//! Dataset ingestion and per-tree subsampling.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major dataset with optional binary labels (1 = anomaly).
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    n_rows: usize,
    n_cols: usize,
    values: Vec<f64>,
    labels: Option<Vec<u8>>,
    feature_names: Vec<String>,
}

impl DataMatrix {
    /// Builds a matrix from rows, rejecting ragged or non-finite input.
    pub fn from_rows(rows: &[Vec<f64>], labels: Option<Vec<u8>>) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * n_cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_cols {
                return Err(Error::DimensionMismatch {
                    expected: n_cols,
                    got: row.len(),
                });
            }
            if let Some(j) = row.iter().position(|x| !x.is_finite()) {
                return Err(Error::Domain(format!("non-finite value at row {i}, column {j}")));
            }
            values.extend_from_slice(row);
        }
        let feature_names = (0..n_cols).map(|j| format!("f{j}")).collect();
        Self::from_parts(rows.len(), n_cols, values, labels, feature_names)
    }

    fn from_parts(
        n_rows: usize,
        n_cols: usize,
        values: Vec<f64>,
        labels: Option<Vec<u8>>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        if let Some(labels) = &labels {
            if labels.len() != n_rows {
                return Err(Error::DimensionMismatch {
                    expected: n_rows,
                    got: labels.len(),
                });
            }
            if labels.iter().any(|&l| l > 1) {
                return Err(Error::Domain("labels must be 0 or 1".into()));
            }
        }
        Ok(Self {
            n_rows,
            n_cols,
            values,
            labels,
            feature_names,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.n_rows).map(move |i| self.row(i))
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Copy with rows reordered by `order` (labels follow their rows).
    pub fn select_rows(&self, order: &[usize]) -> Self {
        let mut values = Vec::with_capacity(order.len() * self.n_cols);
        for &i in order {
            values.extend_from_slice(self.row(i));
        }
        Self {
            n_rows: order.len(),
            n_cols: self.n_cols,
            values,
            labels: self
                .labels
                .as_ref()
                .map(|l| order.iter().map(|&i| l[i]).collect()),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Applies `f` to every row in place.
    pub(crate) fn map_rows(&mut self, mut f: impl FnMut(&mut [f64])) {
        if self.n_cols == 0 {
            return;
        }
        for row in self.values.chunks_mut(self.n_cols) {
            f(row);
        }
    }
}

/// Reads a comma-delimited file with a header row.
///
/// When `label_column` is given that column is removed from the features and
/// parsed as 0/1 labels.
pub fn load_csv(path: impl AsRef<Path>, label_column: Option<&str>) -> Result<DataMatrix> {
    let path = path.as_ref();
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.iter().all(u8::is_ascii_whitespace) {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(raw.as_slice());
    let parse_err = |row: usize, column: &str, message: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        column: column.to_string(),
        message,
    };

    let header: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(1, "<header>", e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let label_idx = match label_column {
        Some(name) => Some(header.iter().position(|h| h == name).ok_or_else(|| {
            Error::MissingLabelColumn {
                path: path.to_path_buf(),
                column: name.to_string(),
            }
        })?),
        None => None,
    };
    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(j, _)| Some(j) != label_idx)
        .map(|(_, h)| h.clone())
        .collect();

    let mut values = Vec::new();
    let mut labels = label_idx.map(|_| Vec::new());
    let mut n_rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, "<row>", e.to_string())
        })?;
        let line = record.position().map_or(n_rows + 2, |p| p.line() as usize);
        for (j, cell) in record.iter().enumerate() {
            let value: f64 = cell
                .parse()
                .map_err(|_| parse_err(line, &header[j], format!("'{cell}' is not a number")))?;
            if !value.is_finite() {
                return Err(parse_err(line, &header[j], format!("'{cell}' is not finite")));
            }
            if Some(j) == label_idx {
                let label = match value {
                    0.0 => 0,
                    1.0 => 1,
                    _ => {
                        return Err(parse_err(
                            line,
                            &header[j],
                            format!("label '{cell}' is not 0 or 1"),
                        ))
                    }
                };
                if let Some(labels) = labels.as_mut() {
                    labels.push(label);
                }
            } else {
                values.push(value);
            }
        }
        n_rows += 1;
    }

    DataMatrix::from_parts(n_rows, feature_names.len(), values, labels, feature_names)
}

/// Per-feature min-max scaling to `[0, 1]`. Constant features map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(data: &DataMatrix) -> Self {
        let mut min = vec![f64::INFINITY; data.n_cols()];
        let mut max = vec![f64::NEG_INFINITY; data.n_cols()];
        for row in data.rows() {
            for (j, &x) in row.iter().enumerate() {
                min[j] = min[j].min(x);
                max[j] = max[j].max(x);
            }
        }
        Self { min, max }
    }

    pub fn transform_row(&self, row: &mut [f64]) {
        for (j, x) in row.iter_mut().enumerate() {
            let span = self.max[j] - self.min[j];
            *x = if span > 0.0 { (*x - self.min[j]) / span } else { 0.0 };
        }
    }

    pub fn transform(&self, data: &DataMatrix) -> Result<DataMatrix> {
        if data.n_cols() != self.min.len() {
            return Err(Error::DimensionMismatch {
                expected: self.min.len(),
                got: data.n_cols(),
            });
        }
        let mut out = data.clone();
        out.map_rows(|row| self.transform_row(row));
        Ok(out)
    }
}

/// Distinct row indices drawn for one tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subsample {
    pub indices: Vec<usize>,
}

impl Subsample {
    pub fn size(&self) -> usize {
        self.indices.len()
    }
}

/// Uniform sampling without replacement of `min(psi, n)` rows.
pub fn subsample<R: Rng + ?Sized>(data: &DataMatrix, psi: usize, rng: &mut R) -> Result<Subsample> {
    if psi < 2 {
        return Err(Error::InvalidConfig(format!("sample size must be >= 2, got {psi}")));
    }
    let n = data.n_rows();
    if n < 2 {
        return Err(Error::TooFewRows(n));
    }
    let indices = rand::seq::index::sample(rng, n, psi.min(n)).into_vec();
    Ok(Subsample { indices })
}

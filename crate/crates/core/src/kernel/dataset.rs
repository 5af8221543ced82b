//! Point sets and the LIBSVM text format.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-feature min/max recorded by a `[0, 1]` rescale, so held-out points can
/// be mapped the same way.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl FeatureScaling {
    pub fn apply(&self, point: &mut [f64]) {
        for (j, x) in point.iter_mut().enumerate() {
            let span = self.max[j] - self.min[j];
            *x = if span > 0.0 {
                (*x - self.min[j]) / span
            } else {
                0.0
            };
        }
    }
}

/// `n` points of dimension `d`, stored row-major (point `i` occupies
/// `values[i*d..(i+1)*d]`).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    n: usize,
    dim: usize,
    values: Vec<f64>,
    labels: Option<Vec<f64>>,
    scaling: Option<FeatureScaling>,
}

impl Dataset {
    pub fn from_rows(
        n: usize,
        dim: usize,
        values: Vec<f64>,
        labels: Option<Vec<f64>>,
    ) -> Result<Self> {
        if values.len() != n * dim {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {n} points of dimension {dim}",
                values.len()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "{} labels for {n} points",
                    l.len()
                )));
            }
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite feature value".into()));
        }
        Ok(Dataset {
            n,
            dim,
            values,
            labels,
            scaling: None,
        })
    }

    pub fn from_points(points: &[Vec<f64>], labels: Option<Vec<f64>>) -> Result<Self> {
        let dim = points.first().map_or(0, |p| p.len());
        if let Some(bad) = points.iter().position(|p| p.len() != dim) {
            return Err(Error::ShapeMismatch(format!(
                "point {bad} has dimension {}, expected {dim}",
                points[bad].len()
            )));
        }
        let values = points.iter().flatten().copied().collect();
        Self::from_rows(points.len(), dim, values, labels)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> Option<&[f64]> {
        self.labels.as_deref()
    }

    pub fn scaling(&self) -> Option<&FeatureScaling> {
        self.scaling.as_ref()
    }

    /// Min-max rescales every feature to `[0, 1]`; constant features become 0.
    pub fn rescale_unit(&mut self) {
        let d = self.dim;
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for i in 0..self.n {
            for (j, &x) in self.point(i).iter().enumerate() {
                min[j] = min[j].min(x);
                max[j] = max[j].max(x);
            }
        }
        let scaling = FeatureScaling { min, max };
        for chunk in self.values.chunks_mut(d.max(1)) {
            scaling.apply(chunk);
        }
        self.scaling = Some(scaling);
    }

    /// Points (and labels) at the given positions, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut values = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            values.extend_from_slice(self.point(i));
        }
        Dataset {
            n: indices.len(),
            dim: self.dim,
            values,
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            scaling: self.scaling.clone(),
        }
    }
}

/// Parses LIBSVM text: `label idx:val idx:val ...` with 1-based, strictly
/// ascending indices. Absent features are zero; the dimension is the largest
/// index seen. Blank lines and `#` comments are skipped.
pub fn parse_libsvm<R: BufRead>(reader: R, rescale: bool) -> Result<Dataset> {
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels = Vec::new();
    let mut dim = 0usize;

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label_tok = tokens.next().expect("non-empty line has a token");
        let label: f64 = label_tok.parse().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("bad label {label_tok:?}"),
        })?;

        let mut row = Vec::new();
        let mut last = 0usize;
        for tok in tokens {
            let (idx, val) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line: lineno,
                message: format!("expected idx:val, got {tok:?}"),
            })?;
            let idx: usize = idx.parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("bad index {idx:?}"),
            })?;
            let val: f64 = val.parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("bad value {val:?}"),
            })?;
            if idx == 0 {
                return Err(Error::Parse {
                    line: lineno,
                    message: "indices are 1-based".into(),
                });
            }
            if idx <= last {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("index {idx} does not ascend past {last}"),
                });
            }
            if !val.is_finite() {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("non-finite value at index {idx}"),
                });
            }
            last = idx;
            row.push((idx - 1, val));
        }
        dim = dim.max(last);
        rows.push(row);
        labels.push(label);
    }

    let n = rows.len();
    let mut values = vec![0.0; n * dim];
    for (i, row) in rows.iter().enumerate() {
        for &(j, v) in row {
            values[i * dim + j] = v;
        }
    }
    let mut ds = Dataset::from_rows(n, dim, values, Some(labels))?;
    if rescale {
        ds.rescale_unit();
    }
    Ok(ds)
}

pub fn read_libsvm(path: impl AsRef<Path>, rescale: bool) -> Result<Dataset> {
    let file = File::open(path)?;
    parse_libsvm(BufReader::new(file), rescale)
}

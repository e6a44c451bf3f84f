//! Sparse labelled datasets in svmlight text format.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("dataset is empty")]
    Empty,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Row-sparse design matrix with ±1 labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseDataset {
    /// Per row: strictly increasing 0-based column indices and their values.
    pub rows: Vec<Vec<(usize, f64)>>,
    pub labels: Vec<f64>,
    pub d: usize,
}

impl SparseDataset {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn row_norm_sq(&self, i: usize) -> f64 {
        self.rows[i].iter().map(|(_, v)| v * v).sum()
    }
}

/// Label rule: with `positive_class`, that class maps to +1 and every other to −1;
/// without it, labels must be numeric and positive values map to +1.
pub fn parse_sparse(text: &str, positive_class: Option<&str>) -> Result<SparseDataset, DataError> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut d = 0usize;
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label_tok = tokens.next().expect("non-empty line has a token");
        let label = match positive_class {
            Some(pc) => {
                if label_tok == pc {
                    1.0
                } else {
                    -1.0
                }
            }
            None => {
                let v: f64 = label_tok
                    .parse()
                    .map_err(|_| DataError::Parse { line, msg: format!("bad label {label_tok:?}") })?;
                if v > 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
        };
        let mut row: Vec<(usize, f64)> = Vec::new();
        for tok in tokens {
            let (i, v) = tok
                .split_once(':')
                .ok_or_else(|| DataError::Parse { line, msg: format!("expected idx:value, got {tok:?}") })?;
            let idx: usize = i.parse().map_err(|_| DataError::Parse { line, msg: format!("bad index {i:?}") })?;
            if idx == 0 {
                return Err(DataError::Parse { line, msg: "indices are 1-based".into() });
            }
            let val: f64 = v.parse().map_err(|_| DataError::Parse { line, msg: format!("bad value {v:?}") })?;
            if let Some(&(prev, _)) = row.last() {
                if idx - 1 <= prev {
                    return Err(DataError::Parse { line, msg: "indices must be strictly increasing".into() });
                }
            }
            row.push((idx - 1, val));
            d = d.max(idx);
        }
        rows.push(row);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(SparseDataset { rows, labels, d })
}

pub fn load_sparse_dataset(path: &Path, positive_class: Option<&str>) -> Result<SparseDataset, DataError> {
    parse_sparse(&std::fs::read_to_string(path)?, positive_class)
}

/// Text form readable by [`parse_sparse`]; values use the shortest round-trip format.
pub fn write_sparse(data: &SparseDataset) -> String {
    let mut out = String::new();
    for (row, &y) in data.rows.iter().zip(&data.labels) {
        out.push_str(if y > 0.0 { "+1" } else { "-1" });
        for &(j, v) in row {
            write!(out, " {}:{:?}", j + 1, v).expect("write to string");
        }
        out.push('\n');
    }
    out
}

/// Gaussian features with labels from a sparse planted model and 10% label flips.
pub fn synthetic_logistic(n: usize, d: usize, seed: u64) -> SparseDataset {
    let mut rng = lcpg::drivers::stream(seed, 3);
    let support = (d / 10).max(1);
    let w: Vec<f64> = (0..d).map(|j| if j < support { if j % 2 == 0 { 1.0 } else { -1.0 } } else { 0.0 }).collect();
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let a: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let margin: f64 = a.iter().zip(&w).map(|(x, y)| x * y).sum();
        let mut y = if margin >= 0.0 { 1.0 } else { -1.0 };
        if rng.random::<f64>() < 0.1 {
            y = -y;
        }
        rows.push(a.into_iter().enumerate().collect());
        labels.push(y);
    }
    SparseDataset { rows, labels, d }
}

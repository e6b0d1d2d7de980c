//! LIBSVM sparse text format: `<label> <index>:<value> ...` with 1-based
//! indices.

use std::fmt;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("no samples in input")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How raw two-valued labels were mapped onto `{-1, +1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelMapping {
    pub negative: f64,
    pub positive: f64,
}

impl fmt::Display for LabelMapping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> -1, {} -> +1", self.negative, self.positive)
    }
}

#[derive(Debug, Clone)]
pub struct LibsvmData {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// `None` when the labels were already `{-1, +1}` or are not two-valued.
    pub mapping: Option<LabelMapping>,
}

impl LibsvmData {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn n_positive(&self) -> usize {
        self.y.iter().filter(|&&v| v == 1.0).count()
    }
}

fn bad(line: usize, msg: impl Into<String>) -> ParseError {
    ParseError::Malformed {
        line,
        msg: msg.into(),
    }
}

pub fn parse_str(text: &str) -> Result<LibsvmData, ParseError> {
    let mut labels = Vec::new();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut d = 0usize;
    for (k, raw) in text.lines().enumerate() {
        let ln = k + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let label_s = fields.next().unwrap_or_default();
        let label: f64 = label_s
            .parse()
            .map_err(|_| bad(ln, format!("label {label_s:?} is not a number")))?;
        if !label.is_finite() {
            return Err(bad(ln, "label is not finite"));
        }
        let mut row = Vec::new();
        let mut last = 0usize;
        for f in fields {
            let (i_s, v_s) = f
                .split_once(':')
                .ok_or_else(|| bad(ln, format!("expected index:value, got {f:?}")))?;
            let i: usize = i_s
                .parse()
                .map_err(|_| bad(ln, format!("index {i_s:?} is not a positive integer")))?;
            if i == 0 {
                return Err(bad(ln, "indices are 1-based"));
            }
            if i <= last {
                return Err(bad(ln, format!("index {i} is not ascending")));
            }
            last = i;
            let v: f64 = v_s
                .parse()
                .map_err(|_| bad(ln, format!("value {v_s:?} is not a number")))?;
            if !v.is_finite() {
                return Err(bad(ln, format!("value at index {i} is not finite")));
            }
            d = d.max(i);
            row.push((i, v));
        }
        labels.push(label);
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(ParseError::Empty);
    }
    let mut x = DMatrix::zeros(rows.len(), d);
    for (r, row) in rows.iter().enumerate() {
        for &(i, v) in row {
            x[(r, i - 1)] = v;
        }
    }
    let (y, mapping) = map_labels(&labels);
    Ok(LibsvmData { x, y, mapping })
}

pub fn parse_libsvm(path: &Path) -> Result<LibsvmData, ParseError> {
    parse_str(&fs::read_to_string(path)?)
}

/// Two-valued labels other than `{-1, +1}` (e.g. `{0, 1}`, `{1, 2}`, `{2, 4}`)
/// become `-1` for the smaller value and `+1` for the larger.
fn map_labels(labels: &[f64]) -> (DVector<f64>, Option<LabelMapping>) {
    let mut distinct: Vec<f64> = labels.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let y = DVector::from_column_slice(labels);
    if distinct.len() != 2 || distinct == [-1.0, 1.0] {
        return (y, None);
    }
    let m = LabelMapping {
        negative: distinct[0],
        positive: distinct[1],
    };
    (y.map(|v| if v == m.positive { 1.0 } else { -1.0 }), Some(m))
}

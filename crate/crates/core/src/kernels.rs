//! Gram matrices: linear, RBF and precomputed (e.g. NTK) kernels.

use std::fs;
use std::io::Write;
use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Asymmetry above this (relative to `max |K|`) is reported.
pub const ASYMMETRY_WARN_TOL: f64 = 1e-8;
/// Asymmetry above this is treated as a corrupt or mislabeled file.
pub const ASYMMETRY_ERROR_TOL: f64 = 1e-4;
/// Eigenvalues below `-PSD_TOL * |K|` trigger a diagonal shift.
pub const PSD_TOL: f64 = 1e-8;

const BINARY_MAGIC: &[u8; 4] = b"GRAM";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RbfMode {
    /// `exp(-|z_i - z_j|^2 / zeta)`
    Squared,
    /// `exp(-|z_i - z_j| / zeta)`
    Unsquared,
}

impl RbfMode {
    pub fn name(&self) -> &'static str {
        match self {
            RbfMode::Squared => "squared",
            RbfMode::Unsquared => "unsquared",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// `zeta = d' * Var(Z)`, variance over all entries.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSource {
    Linear,
    Rbf { zeta: f64, mode: RbfMode },
    Precomputed,
}

#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub k: DMatrix<f64>,
    pub source: KernelSource,
    /// Amount added to the diagonal to repair a slightly indefinite matrix.
    pub psd_shift: f64,
    /// Largest `|K_ij - K_ji| / max|K|` seen before symmetrization.
    pub asymmetry: f64,
}

impl GramMatrix {
    pub fn n(&self) -> usize {
        self.k.nrows()
    }
}

fn check_finite(z: &DMatrix<f64>) -> Result<()> {
    for c in 0..z.ncols() {
        for r in 0..z.nrows() {
            if !z[(r, c)].is_finite() {
                return Err(Error::NonFinite { row: r, col: c });
            }
        }
    }
    Ok(())
}

/// `K = Z Z^T`.
pub fn gram_linear(z: &DMatrix<f64>) -> Result<GramMatrix> {
    check_finite(z)?;
    let k = z * z.transpose();
    Ok(GramMatrix {
        k: symmetrize(k).0,
        source: KernelSource::Linear,
        psd_shift: 0.0,
        asymmetry: 0.0,
    })
}

/// `d' * Var(Z)` with the population variance over every entry of `Z`.
pub fn auto_bandwidth(z: &DMatrix<f64>) -> Result<f64> {
    if z.is_empty() {
        return Err(Error::Empty("feature matrix"));
    }
    check_finite(z)?;
    let count = z.len() as f64;
    let mean = z.sum() / count;
    let var = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
    let zeta = z.ncols() as f64 * var;
    if !(zeta > 0.0) {
        return Err(Error::InvalidParameter(
            "automatic RBF bandwidth is zero (constant features)".into(),
        ));
    }
    Ok(zeta)
}

pub fn gram_rbf(z: &DMatrix<f64>, bandwidth: Bandwidth, mode: RbfMode) -> Result<GramMatrix> {
    check_finite(z)?;
    let zeta = match bandwidth {
        Bandwidth::Auto => auto_bandwidth(z)?,
        Bandwidth::Fixed(v) => {
            if !(v > 0.0) || v.is_nan() {
                return Err(Error::InvalidParameter(format!(
                    "RBF bandwidth must be positive, got {v}"
                )));
            }
            v
        }
    };
    let n = z.nrows();
    let sq: Vec<f64> = (0..n).map(|i| z.row(i).norm_squared()).collect();
    let g = z * z.transpose();
    let mut k = DMatrix::from_element(n, n, 1.0);
    for j in 0..n {
        for i in 0..j {
            // Clamp cancellation error in |a|^2 + |b|^2 - 2ab.
            let d2 = (sq[i] + sq[j] - 2.0 * g[(i, j)]).max(0.0);
            let d = match mode {
                RbfMode::Squared => d2,
                RbfMode::Unsquared => d2.sqrt(),
            };
            let v = (-d / zeta).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(GramMatrix {
        k,
        source: KernelSource::Rbf { zeta, mode },
        psd_shift: 0.0,
        asymmetry: 0.0,
    })
}

fn symmetrize(k: DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let scale = k.amax();
    let mut asym = 0.0f64;
    let n = k.nrows();
    let mut out = k;
    for j in 0..n {
        for i in 0..j {
            let (a, b) = (out[(i, j)], out[(j, i)]);
            asym = asym.max((a - b).abs());
            let m = 0.5 * (a + b);
            out[(i, j)] = m;
            out[(j, i)] = m;
        }
    }
    let rel = if scale > 0.0 { asym / scale } else { 0.0 };
    (out, rel)
}

/// Symmetrizes a raw kernel and shifts its diagonal if it is indefinite beyond
/// rounding.
pub fn from_raw(k: DMatrix<f64>, source: KernelSource) -> Result<GramMatrix> {
    let n = k.nrows();
    if n == 0 {
        return Err(Error::Empty("kernel matrix"));
    }
    if k.ncols() != n {
        return Err(Error::DimensionMismatch {
            what: "kernel columns",
            expected: n,
            got: k.ncols(),
        });
    }
    check_finite(&k)?;
    let (mut k, asym) = symmetrize(k);
    if asym > ASYMMETRY_ERROR_TOL {
        return Err(Error::NotSymmetric(asym));
    }
    if asym > ASYMMETRY_WARN_TOL {
        warn!("kernel asymmetry {asym:e} exceeds {ASYMMETRY_WARN_TOL:e}; averaged with its transpose");
    }
    let norm = k.amax();
    let eig = SymmetricEigen::try_new(k.clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::Eigen("kernel eigendecomposition did not converge".into()))?;
    let min = eig.eigenvalues.min();
    let mut shift = 0.0;
    if min < -PSD_TOL * norm {
        shift = -min;
        warn!("kernel smallest eigenvalue {min:e}; shifting diagonal by {shift:e}");
        for i in 0..n {
            k[(i, i)] += shift;
        }
    }
    if let Some(i) = (0..n).find(|&i| k[(i, i)] < 0.0) {
        return Err(Error::KernelFormat(format!(
            "negative diagonal entry {} at {i}",
            k[(i, i)]
        )));
    }
    Ok(GramMatrix {
        k,
        source,
        psd_shift: shift,
        asymmetry: asym,
    })
}

fn parse_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| {
                f.trim().parse::<f64>().map_err(|e| {
                    Error::KernelFormat(format!("line {}: bad value {:?}: {e}", ln + 1, f.trim()))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::KernelFormat(format!(
                    "line {}: {} values, expected {}",
                    ln + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    let nr = rows.len();
    let nc = rows.first().map_or(0, |r| r.len());
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

fn parse_binary(bytes: &[u8]) -> Result<DMatrix<f64>> {
    if bytes.len() < 12 {
        return Err(Error::KernelFormat("binary header truncated".into()));
    }
    let n = u64::from_le_bytes(bytes[4..12].try_into().unwrap());
    let n = usize::try_from(n).map_err(|_| Error::KernelFormat(format!("n = {n} too large")))?;
    let expected = n
        .checked_mul(n)
        .and_then(|m| m.checked_mul(8))
        .and_then(|m| m.checked_add(12))
        .ok_or_else(|| Error::KernelFormat(format!("n = {n} too large")))?;
    if bytes.len() != expected {
        return Err(Error::KernelFormat(format!(
            "binary payload is {} bytes, expected {expected} for n = {n}",
            bytes.len()
        )));
    }
    let body = &bytes[12..];
    Ok(DMatrix::from_fn(n, n, |i, j| {
        let o = 8 * (i * n + j);
        f64::from_le_bytes(body[o..o + 8].try_into().unwrap())
    }))
}

/// Reads an `n x n` kernel from CSV or the `GRAM` binary format (detected by
/// the magic bytes).
pub fn load_precomputed(path: &Path, n: usize) -> Result<GramMatrix> {
    let bytes = fs::read(path)?;
    let k = if bytes.starts_with(BINARY_MAGIC) {
        parse_binary(&bytes)?
    } else {
        let text = std::str::from_utf8(&bytes)
            .map_err(|_| Error::KernelFormat("file is neither GRAM binary nor UTF-8 text".into()))?;
        parse_csv(text)?
    };
    if k.nrows() != n || k.ncols() != n {
        return Err(Error::KernelFormat(format!(
            "expected a {n}x{n} matrix, found {}x{}",
            k.nrows(),
            k.ncols()
        )));
    }
    from_raw(k, KernelSource::Precomputed)
}

pub fn write_binary(path: &Path, k: &DMatrix<f64>) -> Result<()> {
    let n = k.nrows();
    let mut buf = Vec::with_capacity(12 + 8 * n * n);
    buf.extend_from_slice(BINARY_MAGIC);
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    for i in 0..n {
        for j in 0..n {
            buf.extend_from_slice(&k[(i, j)].to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn write_csv(path: &Path, k: &DMatrix<f64>) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for i in 0..k.nrows() {
        let row: Vec<String> = (0..k.ncols()).map(|j| format!("{:e}", k[(i, j)])).collect();
        writeln!(f, "{}", row.join(","))?;
    }
    f.flush()?;
    Ok(())
}

/// `diag(y) K diag(y)`, the Gram matrix of the label-adjusted rows.
pub fn label_adjusted(k: &GramMatrix, y: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = k.n();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            what: "labels",
            expected: n,
            got: y.len(),
        });
    }
    if let Some(i) = y.iter().position(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::InvalidLabel {
            row: i,
            label: y[i],
            loss: "label-adjusted kernel",
        });
    }
    Ok(DMatrix::from_fn(n, n, |i, j| y[i] * y[j] * k.k[(i, j)]))
}

//! Dataset loading, preprocessing and kernel selection for experiments.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use drsss::kernels::{gram_rbf, load_precomputed, Bandwidth, RbfMode};
use drsss::{Dataset, LossKind};
use log::{info, warn};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::libsvm::{parse_libsvm, LibsvmData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Preprocess {
    None,
    /// Per-column z-score with the population standard deviation; constant
    /// columns become zero.
    Standardize,
}

impl FromStr for Preprocess {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(Preprocess::None),
            "standardize" => Ok(Preprocess::Standardize),
            _ => Err(format!("unknown preprocessing {s:?} (expected none|standardize)")),
        }
    }
}

pub fn standardize(x: &mut DMatrix<f64>) {
    let n = x.nrows() as f64;
    for mut col in x.column_iter_mut() {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd > 0.0 {
            col.apply(|v| *v = (*v - mean) / sd);
        } else {
            col.fill(0.0);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    Linear,
    Rbf(RbfMode),
    Precomputed(PathBuf),
}

impl KernelSpec {
    /// Parses `linear`, `rbf` or `precomputed:<path>`; `rbf_mode` selects the
    /// distance convention for `rbf`.
    pub fn parse(s: &str, rbf_mode: RbfMode) -> std::result::Result<Self, String> {
        match s {
            "linear" => Ok(KernelSpec::Linear),
            "rbf" => Ok(KernelSpec::Rbf(rbf_mode)),
            _ => match s.strip_prefix("precomputed:") {
                Some(p) if !p.is_empty() => Ok(KernelSpec::Precomputed(PathBuf::from(p))),
                _ => Err(format!(
                    "unknown kernel {s:?} (expected linear|rbf|precomputed:<path>)"
                )),
            },
        }
    }

    /// Short label used in output rows.
    pub fn mode_label(&self) -> String {
        match self {
            KernelSpec::Linear => "linear".into(),
            KernelSpec::Rbf(m) => format!("rbf-{}", m.name()),
            KernelSpec::Precomputed(_) => "precomputed".into(),
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Precomputed(p) => write!(f, "precomputed:{}", p.display()),
            other => f.write_str(&other.mode_label()),
        }
    }
}

/// Size information of the benchmark datasets; `d` counts the intercept.
#[derive(Debug, Clone, Copy)]
pub struct TableEntry {
    pub name: &'static str,
    pub n: usize,
    pub n_pos: usize,
    pub d: usize,
}

pub const BENCHMARKS: &[TableEntry] = &[
    TableEntry { name: "australian", n: 690, n_pos: 307, d: 15 },
    TableEntry { name: "breast-cancer", n: 683, n_pos: 239, d: 11 },
    TableEntry { name: "heart", n: 270, n_pos: 120, d: 14 },
    TableEntry { name: "ionosphere", n: 351, n_pos: 225, d: 35 },
    TableEntry { name: "sonar", n: 208, n_pos: 97, d: 61 },
    TableEntry { name: "splice", n: 1000, n_pos: 517, d: 61 },
    TableEntry { name: "svmguide1", n: 3089, n_pos: 2000, d: 5 },
    TableEntry { name: "phishing", n: 11055, n_pos: 6157, d: 69 },
];

/// Dataset name from a file path, dropping LIBSVM suffixes such as `_scale`.
pub fn dataset_name(path: &Path) -> String {
    let stem = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let stem = stem.split('.').next().unwrap_or("").to_string();
    stem.strip_suffix("_scale").map(str::to_string).unwrap_or(stem)
}

pub fn benchmark(name: &str) -> Option<&'static TableEntry> {
    BENCHMARKS.iter().find(|e| e.name == name)
}

/// Compares a loaded dataset with the reference sizes and returns one message
/// per mismatch (also logged as warnings).
pub fn verify_against_table(name: &str, data: &LibsvmData) -> Vec<String> {
    let Some(e) = benchmark(name) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    let d = data.x.ncols() + 1;
    for (what, want, got) in [("n", e.n, data.n()), ("n+", e.n_pos, data.n_positive()), ("d", e.d, d)] {
        if want != got {
            out.push(format!("{name}: {what} = {got}, reference table has {want}"));
        }
    }
    for m in &out {
        warn!("{m}");
    }
    out
}

/// A loaded experiment problem: preprocessed features plus the dataset used
/// for training and screening.
pub struct Problem {
    pub name: String,
    pub raw: LibsvmData,
    pub features: DMatrix<f64>,
    pub dataset: Dataset,
    pub kernel: KernelSpec,
    pub rbf_zeta: Option<f64>,
    pub psd_shift: f64,
    pub warnings: Vec<String>,
}

impl Problem {
    pub fn n(&self) -> usize {
        self.dataset.n()
    }

    pub fn n_positive(&self) -> usize {
        self.dataset.labels().iter().filter(|&&v| v == 1.0).count()
    }
}

/// Hinge-loss dataset for `kernel`. The linear kernel appends an intercept
/// feature; kernel matrices are used as given.
pub fn build_problem(name: &str, raw: LibsvmData, kernel: &KernelSpec, pre: Preprocess) -> Result<Problem> {
    let mut features = raw.x.clone();
    if pre == Preprocess::Standardize {
        standardize(&mut features);
    }
    let y = raw.y.clone();
    if let Some(i) = y.iter().position(|&v| v != 1.0 && v != -1.0) {
        bail!("label {} at row {} is not binary; classification requires two classes", y[i], i + 1);
    }
    let mut rbf_zeta = None;
    let mut psd_shift = 0.0;
    let dataset = match kernel {
        KernelSpec::Linear => Dataset::new(features.clone(), y, LossKind::Hinge, true)?,
        KernelSpec::Rbf(mode) => {
            let g = gram_rbf(&features, Bandwidth::Auto, *mode)?;
            if let drsss::KernelSource::Rbf { zeta, .. } = g.source {
                rbf_zeta = Some(zeta);
            }
            Dataset::from_gram(&g.k, y, LossKind::Hinge, false)?
        }
        KernelSpec::Precomputed(path) => {
            let g = load_precomputed(path, y.len())
                .with_context(|| format!("loading kernel {}", path.display()))?;
            psd_shift = g.psd_shift;
            Dataset::from_gram(&g.k, y, LossKind::Hinge, false)?
        }
    };
    let warnings = verify_against_table(name, &raw);
    info!(
        "{name}: n = {}, d = {}, kernel {kernel}, preprocessing {pre:?}",
        raw.n(),
        raw.x.ncols()
    );
    Ok(Problem {
        name: name.to_string(),
        raw,
        features,
        dataset,
        kernel: kernel.clone(),
        rbf_zeta,
        psd_shift,
        warnings,
    })
}

pub fn load_problem(path: &Path, kernel: &KernelSpec, pre: Preprocess) -> Result<Problem> {
    let raw = parse_libsvm(path).with_context(|| format!("reading {}", path.display()))?;
    build_problem(&dataset_name(path), raw, kernel, pre)
}

//! Screening-rate sweeps, the ISSS vs DRSSS+ISSS cost study and the
//! parameter-shift safeness study.

use std::time::Instant;

use anyhow::{ensure, Result};
use drsss::screening::{screen_at_weight, screen_at_weight_on};
use drsss::solver::train_outcome;
use drsss::{screen_dr, screen_per_weight, Dataset, ModelState, SolverConfig};
use log::{info, warn};
use nalgebra::DVector;
use rand::seq::index::sample;
use serde::Serialize;

use crate::data::Problem;
use crate::weights::{ball_from_class_shift, random_weight, trial_rng};

/// Epoch budget used by the harness. The smallest grid values of lambda on
/// heart and australian need about 20k epochs, above the library default.
pub const HARNESS_MAX_EPOCHS: usize = 100_000;

/// Library defaults with the harness epoch budget.
pub fn harness_solver() -> SolverConfig {
    SolverConfig {
        max_epochs: HARNESS_MAX_EPOCHS,
        ..SolverConfig::default()
    }
}

/// `n * 10^(-k/2)` for `k = 0..=6`.
pub fn default_lambda_grid(n: usize) -> Vec<f64> {
    (0..=6).map(|k| n as f64 * 10f64.powf(-(k as f64) / 2.0)).collect()
}

/// `0.95, 0.96, ..., 1.05`.
pub fn default_a_grid() -> Vec<f64> {
    (0..=10).map(|k| 0.95 + 0.01 * k as f64).collect()
}

/// The grid value closest to `printed` (used to match rounded λ values).
pub fn nearest_grid_value(grid: &[f64], printed: f64) -> Option<f64> {
    grid.iter()
        .copied()
        .min_by(|a, b| (a - printed).abs().total_cmp(&(b - printed).abs()))
}

fn train_center(ds: &Dataset, lambda: f64, solver: &SolverConfig) -> Result<(ModelState, bool)> {
    let w = DVector::from_element(ds.n(), 1.0);
    let out = train_outcome(ds, &w, lambda, solver)?;
    if !out.converged {
        warn!(
            "solver did not reach tolerance at lambda = {lambda} (relative gap {:e})",
            out.model.relative_gap()
        );
    }
    Ok((out.model, out.converged))
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub dataset: String,
    pub lambda: f64,
    pub a: f64,
    pub s: f64,
    pub kernel: String,
    pub rate: f64,
    pub removed: usize,
    pub n: usize,
    pub radius: f64,
    pub gap_at_center: f64,
    pub relative_gap: f64,
    pub converged: bool,
    pub seconds: f64,
    pub seed: u64,
    pub config_hash: String,
}

/// DR screening rate for every `(lambda, a)` pair, training once per lambda at
/// all-ones weights. `a = 1` reproduces per-weight screening exactly.
pub fn sweep_screening_rate(
    p: &Problem,
    lambdas: &[f64],
    a_grid: &[f64],
    solver: &SolverConfig,
    seed: u64,
    config_hash: &str,
) -> Result<Vec<SweepRow>> {
    ensure!(!lambdas.is_empty() && !a_grid.is_empty(), "grids must be nonempty");
    let ds = &p.dataset;
    let mut rows = Vec::with_capacity(lambdas.len() * a_grid.len());
    for &lambda in lambdas {
        let (m, converged) = train_center(ds, lambda, solver)?;
        for &a in a_grid {
            let ball = ball_from_class_shift(ds.labels(), a)?;
            let t = Instant::now();
            let cert = screen_dr(ds, &m, &ball)?;
            let seconds = t.elapsed().as_secs_f64();
            rows.push(SweepRow {
                dataset: p.name.clone(),
                lambda,
                a,
                s: ball.radius,
                kernel: p.kernel.mode_label(),
                rate: cert.rate(),
                removed: cert.removed(),
                n: ds.n(),
                radius: cert.radius,
                gap_at_center: m.gap,
                relative_gap: m.relative_gap(),
                converged,
                seconds,
                seed,
                config_hash: config_hash.to_string(),
            });
        }
        info!("{}: lambda = {lambda} done", p.name);
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct CostRow {
    pub dataset: String,
    pub n: usize,
    pub lambda: f64,
    pub a: f64,
    pub s: f64,
    pub kernel: String,
    pub trials: usize,
    /// Fraction kept by DRSSS before any weight is known.
    pub drsss_remained: f64,
    /// Mean fraction kept after per-weight screening (identical for both
    /// strategies).
    pub isss_remained: f64,
    pub isss_seconds: f64,
    pub drsss_seconds: f64,
    pub isss_after_drsss_seconds: f64,
    pub drsss_isss_seconds: f64,
    /// Trials whose final kept sets differ between the strategies.
    pub mismatched_trials: usize,
    pub gap_at_center: f64,
    pub converged: bool,
    pub seed: u64,
    pub config_hash: String,
}

/// Per-weight screening for `trials` random weights on the sphere, with and
/// without a DR pre-screen. Timing covers screening only.
pub fn experiment_cost(
    p: &Problem,
    lambda: f64,
    a: f64,
    trials: usize,
    solver: &SolverConfig,
    seed: u64,
    config_hash: &str,
) -> Result<CostRow> {
    let ds = &p.dataset;
    let n = ds.n();
    let (m, converged) = train_center(ds, lambda, solver)?;
    let ball = ball_from_class_shift(ds.labels(), a)?;
    let weights: Vec<DVector<f64>> = (0..trials)
        .map(|t| random_weight(&ball, &mut trial_rng(seed, t as u64)))
        .collect();

    let t = Instant::now();
    let mut isss_masks = Vec::with_capacity(trials);
    for w in &weights {
        isss_masks.push(screen_at_weight(ds, &m, w)?.mask);
    }
    let isss_seconds = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let dr = screen_dr(ds, &m, &ball)?;
    let drsss_seconds = t.elapsed().as_secs_f64();
    let kept = dr.kept();
    let t = Instant::now();
    let mut combined = Vec::with_capacity(trials);
    for w in &weights {
        combined.push(screen_at_weight_on(ds, &m, w, &kept)?.mask);
    }
    let isss_after_drsss_seconds = t.elapsed().as_secs_f64();

    let mut mismatched = 0;
    let mut kept_total = 0usize;
    for (full, after) in isss_masks.iter().zip(&combined) {
        let merged: Vec<bool> = (0..n).map(|i| dr.mask[i] || after[i]).collect();
        if &merged != full {
            mismatched += 1;
        }
        kept_total += full.iter().filter(|&&r| !r).count();
    }
    Ok(CostRow {
        dataset: p.name.clone(),
        n,
        lambda,
        a,
        s: ball.radius,
        kernel: p.kernel.mode_label(),
        trials,
        drsss_remained: kept.len() as f64 / n as f64,
        isss_remained: if trials == 0 { f64::NAN } else { kept_total as f64 / (trials * n) as f64 },
        isss_seconds,
        drsss_seconds,
        isss_after_drsss_seconds,
        drsss_isss_seconds: drsss_seconds + isss_after_drsss_seconds,
        mismatched_trials: mismatched,
        gap_at_center: m.gap,
        converged,
        seed,
        config_hash: config_hash.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Strategy {
    #[serde(rename = "DRSSS")]
    Drsss,
    #[serde(rename = "Random")]
    Random,
    #[serde(rename = "NaiveSS")]
    NaiveSs,
}

#[derive(Debug, Clone, Serialize)]
pub struct ShiftRow {
    pub dataset: String,
    pub n: usize,
    pub strategy: Strategy,
    pub remained: f64,
    pub mean_shift: f64,
    pub std_shift: f64,
    pub max_shift: f64,
    pub trials: usize,
    pub lambda: f64,
    pub a: f64,
    pub kernel: String,
    /// Largest relative duality gap among all retrained models.
    pub worst_relative_gap: f64,
    pub seed: u64,
    pub config_hash: String,
}

/// Shifts per strategy plus every individual DRSSS shift (for safeness checks).
#[derive(Debug, Clone)]
pub struct ShiftReport {
    pub rows: Vec<ShiftRow>,
    pub drsss_shifts: Vec<f64>,
}

/// `w * alpha` scattered back to full length.
fn scaled_dual(model: &ModelState, kept: &[usize], n: usize) -> DVector<f64> {
    let mut z = DVector::zeros(n);
    for (k, &i) in kept.iter().enumerate() {
        z[i] = model.weights[k] * model.alpha[k];
    }
    z
}

/// `|beta_1 - beta_2|` from the scaled duals, computed through the design or
/// the Gram matrix.
fn beta_distance(ds: &Dataset, lambda: f64, z1: &DVector<f64>, z2: &DVector<f64>) -> f64 {
    let dz = z1 - z2;
    match ds.transpose_times(&dz) {
        Some(v) => v.norm() / lambda,
        None => dz.dot(&ds.gram_times(&dz)).max(0.0).sqrt() / lambda,
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

struct Retrainer<'a> {
    ds: &'a Dataset,
    lambda: f64,
    solver: &'a SolverConfig,
    worst_gap: f64,
}

impl Retrainer<'_> {
    fn scaled_dual_on(&mut self, kept: &[usize], w: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.ds.n();
        let (sub, wk) = if kept.len() == n {
            (None, w.clone())
        } else {
            (
                Some(self.ds.subset(kept)),
                DVector::from_iterator(kept.len(), kept.iter().map(|&i| w[i])),
            )
        };
        let ds = sub.as_ref().unwrap_or(self.ds);
        let out = train_outcome(ds, &wk, self.lambda, self.solver)?;
        if !out.converged {
            warn!("retraining did not converge (relative gap {:e})", out.model.relative_gap());
        }
        self.worst_gap = self.worst_gap.max(out.model.relative_gap());
        Ok(scaled_dual(&out.model, kept, n))
    }
}

/// Removes samples by each strategy, retrains at `trials` random weights and
/// measures `|beta_full - beta_reduced|`.
#[allow(clippy::too_many_arguments)]
pub fn experiment_shift(
    p: &Problem,
    lambda: f64,
    a: f64,
    trials: usize,
    random_reps: usize,
    solver: &SolverConfig,
    seed: u64,
    config_hash: &str,
) -> Result<ShiftReport> {
    let ds = &p.dataset;
    let n = ds.n();
    let (m, _) = train_center(ds, lambda, solver)?;
    let ball = ball_from_class_shift(ds.labels(), a)?;
    let dr_kept = screen_dr(ds, &m, &ball)?.kept();
    let naive_kept = screen_per_weight(ds, &m)?.kept();
    let removed = n - dr_kept.len();
    let random_kept: Vec<Vec<usize>> = (0..random_reps)
        .map(|r| {
            let mut rng = trial_rng(seed ^ 0x5eed_0000_0000, r as u64);
            let drop = sample(&mut rng, n, removed).into_vec();
            let mut mask = vec![true; n];
            for i in drop {
                mask[i] = false;
            }
            (0..n).filter(|&i| mask[i]).collect()
        })
        .collect();
    let all: Vec<usize> = (0..n).collect();

    let mut rt = Retrainer {
        ds,
        lambda,
        solver,
        worst_gap: 0.0,
    };
    let (mut s_dr, mut s_rand, mut s_naive) = (Vec::new(), Vec::new(), Vec::new());
    for t in 0..trials {
        let w = random_weight(&ball, &mut trial_rng(seed, t as u64));
        let z_full = rt.scaled_dual_on(&all, &w)?;
        let z = rt.scaled_dual_on(&dr_kept, &w)?;
        s_dr.push(beta_distance(ds, lambda, &z_full, &z));
        let z = rt.scaled_dual_on(&naive_kept, &w)?;
        s_naive.push(beta_distance(ds, lambda, &z_full, &z));
        if random_reps > 0 {
            let mut acc = 0.0;
            for kept in &random_kept {
                let z = rt.scaled_dual_on(kept, &w)?;
                acc += beta_distance(ds, lambda, &z_full, &z);
            }
            s_rand.push(acc / random_reps as f64);
        }
    }
    let mut rows = Vec::new();
    for (strategy, shifts, kept) in [
        (Strategy::Drsss, &s_dr, dr_kept.len()),
        (Strategy::Random, &s_rand, dr_kept.len()),
        (Strategy::NaiveSs, &s_naive, naive_kept.len()),
    ] {
        if shifts.is_empty() {
            continue;
        }
        let (mean, std) = mean_std(shifts);
        rows.push(ShiftRow {
            dataset: p.name.clone(),
            n,
            strategy,
            remained: kept as f64 / n as f64,
            mean_shift: mean,
            std_shift: std,
            max_shift: shifts.iter().copied().fold(0.0, f64::max),
            trials,
            lambda,
            a,
            kernel: p.kernel.mode_label(),
            worst_relative_gap: rt.worst_gap,
            seed,
            config_hash: config_hash.to_string(),
        });
    }
    Ok(ShiftReport {
        rows,
        drsss_shifts: s_dr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        let g = default_lambda_grid(100);
        assert_eq!(g.len(), 7);
        assert_eq!(g[0], 100.0);
        assert!((g[6] - 0.1).abs() < 1e-12);
        assert!((nearest_grid_value(&default_lambda_grid(208), 65.8).unwrap() - 65.775).abs() < 1e-2);
        let a = default_a_grid();
        assert_eq!(a.len(), 11);
        assert!((a[5] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mean_std_basic() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }
}

//! Dual coordinate ascent for weighted L2-regularized ERM.
//!
//! Each step maximizes the dual exactly in one coordinate. The running vector
//! `xcheck^T (w * alpha)` (feature mode) or `Kcheck (w * alpha)` (Gram mode) is
//! updated incrementally and rebuilt from scratch whenever the duality gap is
//! checked, once per epoch.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::problem::{check_lambda, Dataset, DualCoordinate, ModelState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepOrder {
    Cyclic,
    /// Fresh permutation every epoch, drawn from a seeded ChaCha8 stream.
    Shuffled { seed: u64 },
}

#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    /// Stop once `gap <= rel_gap_tol * max(1, |P|)`.
    pub rel_gap_tol: f64,
    /// Additionally require `check_kkt` to pass at this tolerance. A small gap
    /// only bounds the KKT residual by roughly its square root.
    pub kkt_tol: Option<f64>,
    pub max_epochs: usize,
    pub sweep_order: SweepOrder,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rel_gap_tol: 1e-9,
            kkt_tol: Some(1e-6),
            max_epochs: 10_000,
            sweep_order: SweepOrder::Shuffled { seed: 0 },
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_gap_tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "rel_gap_tol must be positive, got {}",
                self.rel_gap_tol
            )));
        }
        if let Some(t) = self.kkt_tol {
            if !(t > 0.0) {
                return Err(Error::InvalidParameter(format!("kkt_tol must be positive, got {t}")));
            }
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidParameter("max_epochs must be at least 1".into()));
        }
        Ok(())
    }
}

enum Running {
    /// `xcheck^T (w * alpha)`.
    Primal(DVector<f64>),
    /// `Kcheck (w * alpha)`.
    Gram(DVector<f64>),
}

/// Coordinate ascent state for one weight vector.
pub struct DualCoordinateAscent<'a> {
    ds: &'a Dataset,
    weights: DVector<f64>,
    lambda: f64,
    alpha: DVector<f64>,
    running: Running,
    sq_norms: Vec<f64>,
    coords: Vec<DualCoordinate>,
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

impl<'a> DualCoordinateAscent<'a> {
    /// Starts from `alpha = 0`, which is dual-feasible for every supported loss.
    pub fn new(ds: &'a Dataset, weights: DVector<f64>, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        ds.check_weights(&weights)?;
        let n = ds.n();
        let loss = ds.loss();
        let y = ds.labels();
        let running = match ds.dim() {
            Some(d) => Running::Primal(DVector::zeros(d)),
            None => Running::Gram(DVector::zeros(n)),
        };
        Ok(DualCoordinateAscent {
            ds,
            weights,
            lambda,
            alpha: DVector::zeros(n),
            running,
            sq_norms: ds.row_norms().iter().map(|r| r * r).collect(),
            coords: (0..n).map(|i| loss.dual_coordinate(y[i])).collect(),
        })
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// `xcheck_i . (xcheck^T z)` where `z = w * alpha`.
    fn raw_margin(&self, i: usize) -> f64 {
        match &self.running {
            Running::Primal(v) => self.ds.xcheck().unwrap().row(i).transpose().dot(v),
            Running::Gram(g) => g[i],
        }
    }

    /// Exact maximization of the dual over coordinate `i`.
    pub fn step(&mut self, i: usize) {
        let w = self.weights[i];
        if w == 0.0 {
            // the sample is absent from both objectives
            return;
        }
        let c = self.coords[i];
        let q = self.sq_norms[i];
        let old = self.alpha[i];
        let m = (self.raw_margin(i) - w * old * q) / self.lambda;
        let slope = soft_threshold(c.linear - m, c.eps);
        let denom = 0.5 * c.curvature + w * q / self.lambda;
        let new = if denom > 0.0 {
            (slope / denom).clamp(c.lo, c.hi)
        } else if slope > 0.0 {
            c.hi
        } else if slope < 0.0 {
            c.lo
        } else {
            old.clamp(c.lo, c.hi)
        };
        if new == old || !new.is_finite() {
            return;
        }
        let delta = w * (new - old);
        match &mut self.running {
            Running::Primal(v) => {
                let row = self.ds.xcheck().unwrap().row(i);
                v.axpy(delta, &row.transpose(), 1.0);
            }
            Running::Gram(g) => {
                for j in 0..g.len() {
                    g[j] += delta * self.ds.inner(j, i);
                }
            }
        }
        self.alpha[i] = new;
    }

    fn rebuild(&mut self) {
        let z = self.weights.component_mul(&self.alpha);
        self.running = match &self.running {
            Running::Primal(_) => Running::Primal(self.ds.transpose_times(&z).unwrap()),
            Running::Gram(_) => Running::Gram(self.ds.gram_times(&z)),
        };
    }

    /// Current primal/dual pair.
    pub fn state(&self) -> Result<ModelState> {
        ModelState::from_dual(self.ds, self.weights.clone(), self.lambda, self.alpha.clone())
    }

    /// Current dual objective.
    pub fn dual_value(&self) -> f64 {
        crate::problem::dual_value(self.ds, &self.weights, self.lambda, &self.alpha)
            .ok()
            .and_then(|v| v.finite())
            .unwrap_or(f64::NEG_INFINITY)
    }
}

/// Result of a solver run that may have stopped before reaching its tolerance.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelState,
    pub converged: bool,
}

/// Runs coordinate ascent until the relative duality gap target is met or the
/// epoch budget is exhausted.
pub fn train_outcome(ds: &Dataset, w: &DVector<f64>, lambda: f64, cfg: &SolverConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut cd = DualCoordinateAscent::new(ds, w.clone(), lambda)?;
    let n = ds.n();
    let mut order: Vec<usize> = (0..n).filter(|&i| w[i] != 0.0).collect();
    let mut rng = match cfg.sweep_order {
        SweepOrder::Shuffled { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        SweepOrder::Cyclic => None,
    };
    let mut state = cd.state()?;
    for epoch in 1..=cfg.max_epochs {
        if let Some(rng) = rng.as_mut() {
            order.shuffle(rng);
        }
        for &i in &order {
            cd.step(i);
        }
        cd.rebuild();
        state = cd.state()?;
        state.epochs = epoch;
        let gap_ok = state.gap <= cfg.rel_gap_tol * state.primal.abs().max(1.0);
        let kkt_ok = || cfg.kkt_tol.is_none_or(|t| check_kkt(ds, &state, t).satisfied());
        if gap_ok && kkt_ok() {
            return Ok(TrainOutcome {
                model: state,
                converged: true,
            });
        }
    }
    Ok(TrainOutcome {
        model: state,
        converged: false,
    })
}

/// Trains a model at weights `w`; non-convergence is an error carrying the
/// achieved gap.
pub fn train(ds: &Dataset, w: &DVector<f64>, lambda: f64, cfg: &SolverConfig) -> Result<ModelState> {
    let out = train_outcome(ds, w, lambda, cfg)?;
    if out.converged {
        Ok(out.model)
    } else {
        Err(Error::NotConverged {
            epochs: out.model.epochs,
            gap: out.model.gap,
            target: cfg.rel_gap_tol * out.model.primal.abs().max(1.0),
        })
    }
}

#[derive(Debug, Clone)]
pub struct KktReport {
    pub violations: Vec<f64>,
    pub max_violation: f64,
    pub worst: Option<usize>,
    pub tol: f64,
}

impl KktReport {
    pub fn satisfied(&self) -> bool {
        self.max_violation <= self.tol
    }
}

fn distance_to(v: f64, (lo, hi): (f64, f64)) -> f64 {
    if v < lo {
        lo - v
    } else if v > hi {
        v - hi
    } else {
        0.0
    }
}

/// Checks `-alpha_i in subdiff loss(xcheck_i . beta)` for every sample with
/// positive weight. The violation of sample `i` is the smallest `e` such that
/// some margin `s` with `|s - t_i| <= e` has `-alpha_i` within `e` of the
/// subdifferential at `s`; it reduces to the plain distance at `t_i` away
/// from kinks and tolerates rounding in `t_i` at a kink.
pub fn check_kkt(ds: &Dataset, m: &ModelState, tol: f64) -> KktReport {
    let loss = ds.loss();
    let y = ds.labels();
    let violations: Vec<f64> = (0..ds.n())
        .map(|i| {
            if m.weights[i] == 0.0 {
                return 0.0;
            }
            let t = m.margins[i];
            let target = -m.alpha[i];
            let mut best = distance_to(target, loss.subdifferential(y[i], t));
            for s in loss.kinks(y[i]) {
                let v = (s - t).abs().max(distance_to(target, loss.subdifferential(y[i], s)));
                best = best.min(v);
            }
            best
        })
        .collect();
    let (worst, max_violation) = violations
        .iter()
        .copied()
        .enumerate()
        .fold((None, 0.0), |(wi, wv), (i, v)| if v > wv { (Some(i), v) } else { (wi, wv) });
    KktReport {
        violations,
        max_violation,
        worst,
        tol,
    }
}

/// Indices with `|alpha_i| > threshold`.
pub fn support_indices(m: &ModelState, threshold: f64) -> Vec<usize> {
    m.alpha
        .iter()
        .enumerate()
        .filter(|(_, a)| a.abs() > threshold)
        .map(|(i, _)| i)
        .collect()
}

//! Safe sample screening: the gap sphere, the per-weight rule and the
//! distributionally robust rule over a ball of sample weights.
//!
//! For a fixed pair `(beta~, alpha~)` the duality gap is a convex quadratic in
//! the weights,
//!
//! ```text
//! gap(w) = P_w(beta~) - D_w(alpha~) = w^T A w + 2 b^T w + c
//! A   = diag(alpha~) Kcheck diag(alpha~) / (2 lambda)
//! b_i = (loss(t_i) + loss*(-alpha~_i)) / 2
//! c   = (lambda / 2) |beta~|^2
//! ```
//!
//! where `Kcheck` is the Gram matrix of the `xcheck` rows. Note that
//! `beta~` here is fixed (the center model), so `c` does not depend on `w`.

use nalgebra::{DMatrix, DVector};

use crate::ball_max::{maximize_over_ball, BallMaxResult, QuadraticObjective};
use crate::error::{Error, Result};
use crate::problem::{check_lambda, Dataset, WeightBall};
use crate::problem::ModelState;

/// Relative tolerance below zero for which a duality gap is treated as rounding.
pub const NEGATIVE_GAP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScreeningKind {
    PerWeight,
    Dr,
}

/// The outcome of a screening rule. `mask[i]` is true when sample `i` is
/// certified to have a zero dual variable, i.e. it can be removed.
#[derive(Debug, Clone, PartialEq)]
pub struct ScreeningCertificate {
    pub mask: Vec<bool>,
    pub radius: f64,
    pub gap_at_center: f64,
    pub kind: ScreeningKind,
}

impl ScreeningCertificate {
    pub fn removed(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Fraction of samples removed.
    pub fn rate(&self) -> f64 {
        if self.mask.is_empty() {
            0.0
        } else {
            self.removed() as f64 / self.mask.len() as f64
        }
    }

    /// Indices of samples that were not screened out.
    pub fn kept(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&i| !self.mask[i]).collect()
    }
}

/// `sqrt(2 gap / lambda)`, after clamping negative gaps that are within
/// rounding of zero.
pub fn radius_from_gap(gap: f64, primal: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    if gap.is_nan() {
        return Err(Error::InvalidParameter("duality gap is NaN".into()));
    }
    let gap = if gap < 0.0 {
        if gap >= -NEGATIVE_GAP_TOL * primal.abs().max(1.0) {
            0.0
        } else {
            return Err(Error::NegativeGap { gap, primal });
        }
    } else {
        gap
    };
    Ok((2.0 * gap / lambda).sqrt())
}

/// Radius of the sphere around the optimum implied by the gap between a
/// primal point `beta` and a dual point `alpha` (features only).
pub fn gap_radius(
    ds: &Dataset,
    w: &DVector<f64>,
    lambda: f64,
    beta: &DVector<f64>,
    alpha: &DVector<f64>,
) -> Result<f64> {
    let p = crate::problem::primal_value(ds, w, lambda, beta)?;
    let d = crate::problem::dual_value(ds, w, lambda, alpha)?
        .finite()
        .ok_or_else(|| {
            let i = crate::problem::weighted_conjugate(ds, w, alpha).err().unwrap_or(0);
            Error::InfiniteConjugate(i)
        })?;
    radius_from_gap(p - d, p, lambda)
}

/// Marks sample `i` when `[t_i - |xcheck_i| r, t_i + |xcheck_i| r]` lies in the
/// loss's zero-subgradient interval.
pub fn screen_with_radius(ds: &Dataset, margins: &DVector<f64>, radius: f64) -> Vec<bool> {
    let norms = ds.row_norms();
    let loss = ds.loss();
    (0..ds.n())
        .map(|i| {
            let half = norms[i] * radius;
            let z = loss.zero_interval(ds.labels()[i]);
            z.contains_segment(margins[i] - half, margins[i] + half)
        })
        .collect()
}

/// Gap safe screening for the weights `m` was trained at.
pub fn screen_per_weight(ds: &Dataset, m: &ModelState) -> Result<ScreeningCertificate> {
    let r = radius_from_gap(m.gap, m.primal, m.lambda)?;
    Ok(ScreeningCertificate {
        mask: screen_with_radius(ds, &m.margins, r),
        radius: r,
        gap_at_center: m.gap,
        kind: ScreeningKind::PerWeight,
    })
}

/// Duality gap of the fixed pair `(beta(m), m.alpha)` at different weights `w`,
/// together with the primal value used for the rounding clamp. Only samples in
/// `active` contribute, which is exact when every excluded sample has
/// `alpha_i = 0` and `w_i` is irrelevant to it (as after DR screening).
pub fn gap_at_weight_on(
    ds: &Dataset,
    m: &ModelState,
    w: &DVector<f64>,
    active: &[usize],
) -> Result<(f64, f64)> {
    if w.len() != ds.n() {
        return Err(Error::DimensionMismatch {
            what: "weights",
            expected: ds.n(),
            got: w.len(),
        });
    }
    let loss = ds.loss();
    let y = ds.labels();
    let mut loss_sum = 0.0;
    let mut conj_sum = 0.0;
    for &i in active {
        if w[i] == 0.0 {
            continue;
        }
        loss_sum += w[i] * loss.value(y[i], m.margins[i]);
        conj_sum += w[i]
            * loss
                .conjugate(y[i], -m.alpha[i])
                .finite()
                .ok_or(Error::InfiniteConjugate(i))?;
    }
    let quad = match ds.xcheck() {
        Some(xc) => {
            let mut v = DVector::zeros(xc.ncols());
            for &i in active {
                let s = w[i] * m.alpha[i];
                if s != 0.0 {
                    v.axpy(s, &xc.row(i).transpose(), 1.0);
                }
            }
            v.norm_squared()
        }
        None => {
            let mut q = 0.0;
            for &i in active {
                let si = w[i] * m.alpha[i];
                if si == 0.0 {
                    continue;
                }
                for &j in active {
                    q += si * w[j] * m.alpha[j] * ds.inner(i, j);
                }
            }
            q.max(0.0)
        }
    };
    let primal = loss_sum + 0.5 * m.lambda * m.beta_norm_sq;
    let dual = -conj_sum - quad / (2.0 * m.lambda);
    Ok((primal - dual, primal))
}

/// Per-weight screening at new weights `w` reusing the model trained at the
/// ball center (no retraining). Restricting to `active` gives the
/// DRSSS+ISSS variant, where already-removed samples are skipped.
pub fn screen_at_weight_on(
    ds: &Dataset,
    m: &ModelState,
    w: &DVector<f64>,
    active: &[usize],
) -> Result<ScreeningCertificate> {
    let (gap, primal) = gap_at_weight_on(ds, m, w, active)?;
    let r = radius_from_gap(gap, primal, m.lambda)?;
    let norms = ds.row_norms();
    let loss = ds.loss();
    let mut mask = vec![false; ds.n()];
    for &i in active {
        let half = norms[i] * r;
        mask[i] = loss
            .zero_interval(ds.labels()[i])
            .contains_segment(m.margins[i] - half, m.margins[i] + half);
    }
    Ok(ScreeningCertificate {
        mask,
        radius: r,
        gap_at_center: m.gap,
        kind: ScreeningKind::PerWeight,
    })
}

pub fn screen_at_weight(ds: &Dataset, m: &ModelState, w: &DVector<f64>) -> Result<ScreeningCertificate> {
    let all: Vec<usize> = (0..ds.n()).collect();
    screen_at_weight_on(ds, m, w, &all)
}

/// The duality gap of the center model as a quadratic in the weights.
pub fn dr_gap_quadratic(ds: &Dataset, m: &ModelState) -> Result<QuadraticObjective> {
    let n = ds.n();
    if m.alpha.len() != n || m.margins.len() != n {
        return Err(Error::DimensionMismatch {
            what: "model",
            expected: n,
            got: m.alpha.len(),
        });
    }
    let loss = ds.loss();
    let y = ds.labels();
    let mut b = DVector::zeros(n);
    for i in 0..n {
        let conj = loss
            .conjugate(y[i], -m.alpha[i])
            .finite()
            .ok_or(Error::InfiniteConjugate(i))?;
        b[i] = 0.5 * (loss.value(y[i], m.margins[i]) + conj);
    }
    let k = ds.gram_check();
    let scale = 1.0 / (2.0 * m.lambda);
    let a = DMatrix::from_fn(n, n, |i, j| {
        if i <= j {
            scale * m.alpha[i] * m.alpha[j] * k[(i, j)]
        } else {
            scale * m.alpha[j] * m.alpha[i] * k[(j, i)]
        }
    });
    let c = 0.5 * m.lambda * m.beta_norm_sq;
    QuadraticObjective::new(a, b, c)
}

/// The DR radius together with the worst-case weights that attain it.
#[derive(Debug, Clone)]
pub struct DrRadius {
    pub radius: f64,
    pub max_gap: f64,
    pub worst: Option<BallMaxResult>,
}

fn check_center(m: &ModelState, ball: &WeightBall) -> Result<()> {
    if ball.center.len() != m.weights.len() {
        return Err(Error::DimensionMismatch {
            what: "ball center",
            expected: m.weights.len(),
            got: ball.center.len(),
        });
    }
    let diff = (&ball.center - &m.weights).amax();
    if diff > 1e-12 * ball.center.amax().max(1.0) {
        return Err(Error::InvalidParameter(format!(
            "ball center differs from the model's training weights (max diff {diff:e})"
        )));
    }
    Ok(())
}

/// Radius that covers the optimum for every weight vector in `ball`.
pub fn dr_radius(ds: &Dataset, m: &ModelState, ball: &WeightBall) -> Result<DrRadius> {
    check_center(m, ball)?;
    if ball.radius == 0.0 {
        return Ok(DrRadius {
            radius: radius_from_gap(m.gap, m.primal, m.lambda)?,
            max_gap: m.gap,
            worst: None,
        });
    }
    let q = dr_gap_quadratic(ds, m)?;
    let best = maximize_over_ball(&q, &ball.center, ball.radius)?;
    // The quadratic at the center equals m.gap up to summation order; never let
    // rounding push R below the per-weight radius.
    let max_gap = best.value.max(m.gap);
    let radius = radius_from_gap(max_gap, m.primal, m.lambda)?;
    Ok(DrRadius {
        radius,
        max_gap,
        worst: Some(best),
    })
}

/// Screening that is valid simultaneously for every weight vector in `ball`.
pub fn screen_dr(ds: &Dataset, m: &ModelState, ball: &WeightBall) -> Result<ScreeningCertificate> {
    let dr = dr_radius(ds, m, ball)?;
    Ok(ScreeningCertificate {
        mask: screen_with_radius(ds, &m.margins, dr.radius),
        radius: dr.radius,
        gap_at_center: m.gap,
        kind: ScreeningKind::Dr,
    })
}

//! Weighted regularized empirical risk minimization with an L2 regularizer.
//!
//! The primal problem for sample weights `w >= 0` is
//!
//! ```text
//! P_w(beta)  = sum_i w_i * loss_{y_i}(xcheck_i . beta) + (lambda / 2) * |beta|^2
//! D_w(alpha) = -sum_i w_i * loss*_{y_i}(-alpha_i) - |xcheck^T (w * alpha)|^2 / (2 lambda)
//! ```
//!
//! where `xcheck` is the loss-adjusted design (`y_i * x_i` for classification,
//! `x_i` for regression) and `beta = xcheck^T (w * alpha) / lambda` links the two.
//! A dataset is either held as explicit features or only through the Gram matrix
//! of its `xcheck` rows; every quantity needed for screening is available in both.

use std::borrow::Cow;
use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Sample-sparse loss functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Hinge,
    SquaredHinge,
    EpsInsensitive(f64),
    SquaredEpsInsensitive(f64),
}

/// Value of a convex conjugate, which may be `+inf` outside its domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Conjugate {
    Finite(f64),
    Infinite,
}

impl Conjugate {
    pub fn is_finite(&self) -> bool {
        matches!(self, Conjugate::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Conjugate::Finite(v) => Some(v),
            Conjugate::Infinite => None,
        }
    }
}

/// Value of the dual objective, `-inf` when some conjugate term is infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DualValue {
    Finite(f64),
    NegInfinite,
}

impl DualValue {
    pub fn finite(self) -> Option<f64> {
        match self {
            DualValue::Finite(v) => Some(v),
            DualValue::NegInfinite => None,
        }
    }
}

/// A real interval whose endpoints may be open, closed or infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl Interval {
    pub fn open(lo: f64, hi: f64) -> Self {
        Interval {
            lo,
            hi,
            lo_closed: false,
            hi_closed: false,
        }
    }

    pub fn closed(lo: f64, hi: f64) -> Self {
        Interval {
            lo,
            hi,
            lo_closed: lo.is_finite(),
            hi_closed: hi.is_finite(),
        }
    }

    pub fn contains(&self, t: f64) -> bool {
        self.contains_segment(t, t)
    }

    /// Whether `[a, b]` lies inside the interval. Open endpoints demand strict
    /// inequality; a segment with an infinite end is never contained.
    pub fn contains_segment(&self, a: f64, b: f64) -> bool {
        if !(a.is_finite() && b.is_finite()) || a > b {
            return false;
        }
        let lower = if self.lo_closed { a >= self.lo } else { a > self.lo };
        let upper = if self.hi_closed { b <= self.hi } else { b < self.hi };
        lower && upper
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let l = if self.lo_closed { '[' } else { '(' };
        let r = if self.hi_closed { ']' } else { ')' };
        write!(f, "{l}{}, {}{r}", self.lo, self.hi)
    }
}

/// Per-coordinate form of the dual term `-loss*(-alpha)`:
/// `linear * a - eps * |a| - curvature * a^2 / 4` for `a` in `[lo, hi]`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct DualCoordinate {
    pub linear: f64,
    pub eps: f64,
    pub curvature: f64,
    pub lo: f64,
    pub hi: f64,
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Hinge => "hinge",
            LossKind::SquaredHinge => "squared-hinge",
            LossKind::EpsInsensitive(_) => "eps-insensitive",
            LossKind::SquaredEpsInsensitive(_) => "squared-eps-insensitive",
        }
    }

    pub fn is_classification(&self) -> bool {
        matches!(self, LossKind::Hinge | LossKind::SquaredHinge)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LossKind::EpsInsensitive(e) | LossKind::SquaredEpsInsensitive(e)
                if !(e > 0.0 && e.is_finite()) =>
            {
                Err(Error::InvalidParameter(format!(
                    "epsilon must be positive and finite, got {e}"
                )))
            }
            _ => Ok(()),
        }
    }

    /// `loss_y(t)`.
    pub fn value(&self, y: f64, t: f64) -> f64 {
        match *self {
            LossKind::Hinge => (1.0 - t).max(0.0),
            LossKind::SquaredHinge => {
                let h = (1.0 - t).max(0.0);
                h * h
            }
            LossKind::EpsInsensitive(e) => ((t - y).abs() - e).max(0.0),
            LossKind::SquaredEpsInsensitive(e) => {
                let h = ((t - y).abs() - e).max(0.0);
                h * h
            }
        }
    }

    /// Convex conjugate `loss*_y(s) = sup_u (s u - loss_y(u))`.
    pub fn conjugate(&self, y: f64, s: f64) -> Conjugate {
        match *self {
            LossKind::Hinge => {
                if (-1.0..=0.0).contains(&s) {
                    Conjugate::Finite(s)
                } else {
                    Conjugate::Infinite
                }
            }
            LossKind::SquaredHinge => {
                if s <= 0.0 {
                    Conjugate::Finite((s * s + 4.0 * s) / 4.0)
                } else {
                    Conjugate::Infinite
                }
            }
            LossKind::EpsInsensitive(e) => {
                if (-1.0..=1.0).contains(&s) {
                    Conjugate::Finite(s * y + e * s.abs())
                } else {
                    Conjugate::Infinite
                }
            }
            LossKind::SquaredEpsInsensitive(e) => {
                if s.is_finite() {
                    Conjugate::Finite(s * s / 4.0 + s * y + e * s.abs())
                } else {
                    Conjugate::Infinite
                }
            }
        }
    }

    /// The set of margins where the subdifferential is exactly `{0}`.
    pub fn zero_interval(&self, y: f64) -> Interval {
        match *self {
            LossKind::Hinge => Interval::open(1.0, f64::INFINITY),
            LossKind::SquaredHinge => Interval::closed(1.0, f64::INFINITY),
            LossKind::EpsInsensitive(e) => Interval::open(y - e, y + e),
            LossKind::SquaredEpsInsensitive(e) => Interval::closed(y - e, y + e),
        }
    }

    /// Subdifferential `[lo, hi]` of `loss_y` at `t`.
    pub fn subdifferential(&self, y: f64, t: f64) -> (f64, f64) {
        match *self {
            LossKind::Hinge => {
                if t < 1.0 {
                    (-1.0, -1.0)
                } else if t > 1.0 {
                    (0.0, 0.0)
                } else {
                    (-1.0, 0.0)
                }
            }
            LossKind::SquaredHinge => {
                let g = -2.0 * (1.0 - t).max(0.0);
                (g, g)
            }
            LossKind::EpsInsensitive(e) => {
                // compare against the kink points themselves so that
                // subdifferential(kinks()) is consistent under rounding
                let (lo, hi) = (y - e, y + e);
                if t > hi {
                    (1.0, 1.0)
                } else if t < lo {
                    (-1.0, -1.0)
                } else if t == hi {
                    (0.0, 1.0)
                } else if t == lo {
                    (-1.0, 0.0)
                } else {
                    (0.0, 0.0)
                }
            }
            LossKind::SquaredEpsInsensitive(e) => {
                let r = t - y;
                let g = 2.0 * r.signum() * (r.abs() - e).max(0.0);
                (g, g)
            }
        }
    }

    /// Margins where the loss is not differentiable.
    pub fn kinks(&self, y: f64) -> Vec<f64> {
        match *self {
            LossKind::Hinge => vec![1.0],
            LossKind::EpsInsensitive(e) => vec![y - e, y + e],
            LossKind::SquaredHinge | LossKind::SquaredEpsInsensitive(_) => Vec::new(),
        }
    }

    /// Box on `alpha_i` where `loss*(-alpha_i)` is finite.
    pub fn dual_box(&self) -> (f64, f64) {
        match self {
            LossKind::Hinge => (0.0, 1.0),
            LossKind::SquaredHinge => (0.0, f64::INFINITY),
            LossKind::EpsInsensitive(_) => (-1.0, 1.0),
            LossKind::SquaredEpsInsensitive(_) => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    pub(crate) fn dual_coordinate(&self, y: f64) -> DualCoordinate {
        let (lo, hi) = self.dual_box();
        let (linear, eps, curvature) = match *self {
            LossKind::Hinge => (1.0, 0.0, 0.0),
            LossKind::SquaredHinge => (1.0, 0.0, 1.0),
            LossKind::EpsInsensitive(e) => (y, e, 0.0),
            LossKind::SquaredEpsInsensitive(e) => (y, e, 1.0),
        };
        DualCoordinate {
            linear,
            eps,
            curvature,
            lo,
            hi,
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossKind::EpsInsensitive(e) | LossKind::SquaredEpsInsensitive(e) => {
                write!(f, "{}({e})", self.name())
            }
            _ => f.write_str(self.name()),
        }
    }
}

/// `loss_y(t)` as a free function.
pub fn loss_value(loss: LossKind, y: f64, t: f64) -> f64 {
    loss.value(y, t)
}

/// `loss*_y(t)` as a free function.
pub fn loss_conjugate(loss: LossKind, y: f64, t: f64) -> Conjugate {
    loss.conjugate(y, t)
}

/// Zero-subgradient interval of `loss_y`.
pub fn zero_interval(loss: LossKind, y: f64) -> Interval {
    loss.zero_interval(y)
}

#[derive(Debug, Clone)]
enum Design {
    Features { x: DMatrix<f64>, xcheck: DMatrix<f64> },
    Gram { kcheck: DMatrix<f64> },
}

/// Training data together with its loss-adjusted design.
#[derive(Debug, Clone)]
pub struct Dataset {
    y: DVector<f64>,
    loss: LossKind,
    design: Design,
    has_intercept: bool,
    row_norms: DVector<f64>,
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            if !m[(r, c)].is_finite() {
                return Err(Error::NonFinite { row: r, col: c });
            }
        }
    }
    Ok(())
}

fn check_labels(y: &DVector<f64>, loss: LossKind) -> Result<()> {
    for (i, &v) in y.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite { row: i, col: 0 });
        }
        if loss.is_classification() && v != 1.0 && v != -1.0 {
            return Err(Error::InvalidLabel {
                row: i,
                label: v,
                loss: loss.name(),
            });
        }
    }
    Ok(())
}

impl Dataset {
    /// Builds the loss-adjusted design from explicit features. With
    /// `add_intercept` a trailing all-ones column is appended; its coefficient
    /// is regularized like every other one.
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, loss: LossKind, add_intercept: bool) -> Result<Self> {
        loss.validate()?;
        let n = x.nrows();
        if n == 0 {
            return Err(Error::Empty("feature matrix has no rows"));
        }
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                what: "labels",
                expected: n,
                got: y.len(),
            });
        }
        check_finite(&x)?;
        check_labels(&y, loss)?;
        let x = if add_intercept {
            let d = x.ncols();
            x.insert_column(d, 1.0)
        } else {
            x
        };
        if x.ncols() == 0 {
            return Err(Error::Empty("feature matrix has no columns"));
        }
        let mut xcheck = x.clone();
        if loss.is_classification() {
            for (i, mut row) in xcheck.row_iter_mut().enumerate() {
                row *= y[i];
            }
        }
        let row_norms = DVector::from_iterator(n, xcheck.row_iter().map(|r| r.norm()));
        Ok(Dataset {
            y,
            loss,
            design: Design::Features { x, xcheck },
            has_intercept: add_intercept,
            row_norms,
        })
    }

    /// Builds a dataset that is only known through the Gram matrix `k` of its
    /// input rows. `add_intercept` augments the implicit feature map with a
    /// constant coordinate, i.e. uses `k + 1`.
    pub fn from_gram(k: &DMatrix<f64>, y: DVector<f64>, loss: LossKind, add_intercept: bool) -> Result<Self> {
        loss.validate()?;
        let n = k.nrows();
        if n == 0 {
            return Err(Error::Empty("Gram matrix has no rows"));
        }
        if k.ncols() != n {
            return Err(Error::DimensionMismatch {
                what: "Gram matrix columns",
                expected: n,
                got: k.ncols(),
            });
        }
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                what: "labels",
                expected: n,
                got: y.len(),
            });
        }
        check_finite(k)?;
        check_labels(&y, loss)?;
        let mut kcheck = k.clone();
        if add_intercept {
            kcheck.add_scalar_mut(1.0);
        }
        if loss.is_classification() {
            for j in 0..n {
                for i in 0..n {
                    kcheck[(i, j)] *= y[i] * y[j];
                }
            }
        }
        let row_norms = DVector::from_iterator(n, (0..n).map(|i| kcheck[(i, i)].max(0.0).sqrt()));
        Ok(Dataset {
            y,
            loss,
            design: Design::Gram { kcheck },
            has_intercept: add_intercept,
            row_norms,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of primal coefficients, `None` in Gram mode.
    pub fn dim(&self) -> Option<usize> {
        self.xcheck().map(|m| m.ncols())
    }

    pub fn loss(&self) -> LossKind {
        self.loss
    }

    pub fn labels(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn has_intercept(&self) -> bool {
        self.has_intercept
    }

    pub fn is_gram(&self) -> bool {
        matches!(self.design, Design::Gram { .. })
    }

    /// Input matrix (intercept column included), feature mode only.
    pub fn features(&self) -> Option<&DMatrix<f64>> {
        match &self.design {
            Design::Features { x, .. } => Some(x),
            Design::Gram { .. } => None,
        }
    }

    pub fn xcheck(&self) -> Option<&DMatrix<f64>> {
        match &self.design {
            Design::Features { xcheck, .. } => Some(xcheck),
            Design::Gram { .. } => None,
        }
    }

    /// `|xcheck_i|_2` for every sample.
    pub fn row_norms(&self) -> &DVector<f64> {
        &self.row_norms
    }

    /// Gram matrix of the `xcheck` rows.
    pub fn gram_check(&self) -> Cow<'_, DMatrix<f64>> {
        match &self.design {
            Design::Features { xcheck, .. } => Cow::Owned(xcheck * xcheck.transpose()),
            Design::Gram { kcheck } => Cow::Borrowed(kcheck),
        }
    }

    /// `xcheck_i . xcheck_j`.
    pub(crate) fn inner(&self, i: usize, j: usize) -> f64 {
        match &self.design {
            Design::Features { xcheck, .. } => xcheck.row(i).dot(&xcheck.row(j)),
            Design::Gram { kcheck } => kcheck[(i, j)],
        }
    }

    /// `xcheck^T z`, feature mode only.
    pub fn transpose_times(&self, z: &DVector<f64>) -> Option<DVector<f64>> {
        self.xcheck().map(|xc| xc.tr_mul(z))
    }

    /// `xcheck xcheck^T z`, available in both modes.
    pub fn gram_times(&self, z: &DVector<f64>) -> DVector<f64> {
        match &self.design {
            Design::Features { xcheck, .. } => xcheck * xcheck.tr_mul(z),
            Design::Gram { kcheck } => kcheck * z,
        }
    }

    /// Keeps only the listed samples, in the given order.
    pub fn subset(&self, keep: &[usize]) -> Dataset {
        let y = DVector::from_iterator(keep.len(), keep.iter().map(|&i| self.y[i]));
        let row_norms = DVector::from_iterator(keep.len(), keep.iter().map(|&i| self.row_norms[i]));
        let design = match &self.design {
            Design::Features { x, xcheck } => Design::Features {
                x: x.select_rows(keep),
                xcheck: xcheck.select_rows(keep),
            },
            Design::Gram { kcheck } => Design::Gram {
                kcheck: kcheck.select_rows(keep).select_columns(keep),
            },
        };
        Dataset {
            y,
            loss: self.loss,
            design,
            has_intercept: self.has_intercept,
            row_norms,
        }
    }

    pub(crate) fn check_weights(&self, w: &DVector<f64>) -> Result<()> {
        if w.len() != self.n() {
            return Err(Error::DimensionMismatch {
                what: "weights",
                expected: self.n(),
                got: w.len(),
            });
        }
        if let Some(i) = w.iter().position(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "weight {i} is {} (must be finite and nonnegative)",
                w[i]
            )));
        }
        Ok(())
    }

    pub(crate) fn check_alpha(&self, alpha: &DVector<f64>) -> Result<()> {
        if alpha.len() != self.n() {
            return Err(Error::DimensionMismatch {
                what: "dual vector",
                expected: self.n(),
                got: alpha.len(),
            });
        }
        Ok(())
    }
}

/// The uncertainty set `{ w : |w - center|_2 <= radius }` of sample weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightBall {
    pub center: DVector<f64>,
    pub radius: f64,
}

impl WeightBall {
    pub fn new(center: DVector<f64>, radius: f64) -> Result<Self> {
        if let Some(i) = center.iter().position(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "ball center entry {i} is {} (must be finite and nonnegative)",
                center[i]
            )));
        }
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "ball radius must be finite and nonnegative, got {radius}"
            )));
        }
        Ok(WeightBall { center, radius })
    }

    pub fn contains(&self, w: &DVector<f64>) -> bool {
        w.len() == self.center.len() && (w - &self.center).norm() <= self.radius * (1.0 + 1e-12)
    }
}

/// Alias matching the operation name used by the harness.
pub fn build_dataset(x: DMatrix<f64>, y: DVector<f64>, loss: LossKind, add_intercept: bool) -> Result<Dataset> {
    Dataset::new(x, y, loss, add_intercept)
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "lambda must be positive and finite, got {lambda}"
        )))
    }
}

/// `P_w(beta)`, feature mode only.
pub fn primal_value(ds: &Dataset, w: &DVector<f64>, lambda: f64, beta: &DVector<f64>) -> Result<f64> {
    check_lambda(lambda)?;
    ds.check_weights(w)?;
    let xc = ds.xcheck().ok_or(Error::FeaturesUnavailable)?;
    if beta.len() != xc.ncols() {
        return Err(Error::DimensionMismatch {
            what: "primal vector",
            expected: xc.ncols(),
            got: beta.len(),
        });
    }
    let margins = xc * beta;
    Ok(weighted_loss(ds, w, &margins) + 0.5 * lambda * beta.norm_squared())
}

pub(crate) fn weighted_loss(ds: &Dataset, w: &DVector<f64>, margins: &DVector<f64>) -> f64 {
    let loss = ds.loss();
    let y = ds.labels();
    (0..ds.n())
        .filter(|&i| w[i] != 0.0)
        .map(|i| w[i] * loss.value(y[i], margins[i]))
        .sum()
}

/// `sum_i w_i loss*(-alpha_i)`, or the index of the first infinite term.
pub(crate) fn weighted_conjugate(ds: &Dataset, w: &DVector<f64>, alpha: &DVector<f64>) -> std::result::Result<f64, usize> {
    let loss = ds.loss();
    let y = ds.labels();
    let mut acc = 0.0;
    for i in 0..ds.n() {
        match loss.conjugate(y[i], -alpha[i]) {
            Conjugate::Finite(v) => {
                if w[i] != 0.0 {
                    acc += w[i] * v
                }
            }
            Conjugate::Infinite => {
                if w[i] != 0.0 {
                    return Err(i);
                }
            }
        }
    }
    Ok(acc)
}

/// `D_w(alpha)`.
pub fn dual_value(ds: &Dataset, w: &DVector<f64>, lambda: f64, alpha: &DVector<f64>) -> Result<DualValue> {
    check_lambda(lambda)?;
    ds.check_weights(w)?;
    ds.check_alpha(alpha)?;
    let conj = match weighted_conjugate(ds, w, alpha) {
        Ok(v) => v,
        Err(_) => return Ok(DualValue::NegInfinite),
    };
    let z = w.component_mul(alpha);
    let quad = z.dot(&ds.gram_times(&z));
    Ok(DualValue::Finite(-conj - quad / (2.0 * lambda)))
}

/// `beta = xcheck^T (w * alpha) / lambda`, feature mode only.
pub fn primal_from_dual(ds: &Dataset, w: &DVector<f64>, lambda: f64, alpha: &DVector<f64>) -> Result<DVector<f64>> {
    check_lambda(lambda)?;
    ds.check_weights(w)?;
    ds.check_alpha(alpha)?;
    let z = w.component_mul(alpha);
    ds.transpose_times(&z)
        .map(|v| v / lambda)
        .ok_or(Error::FeaturesUnavailable)
}

/// A primal/dual pair for one weight vector. `beta` is always the primal point
/// induced by `alpha`, so `margins` and `beta_norm_sq` are available in Gram
/// mode even though `beta` itself is not.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub alpha: DVector<f64>,
    pub beta: Option<DVector<f64>>,
    /// `xcheck_i . beta` for every sample.
    pub margins: DVector<f64>,
    pub beta_norm_sq: f64,
    pub lambda: f64,
    pub weights: DVector<f64>,
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    pub epochs: usize,
}

impl ModelState {
    /// Evaluates the pair `(beta(alpha), alpha)` at weights `w`. Fails when the
    /// dual value is `-inf`.
    pub fn from_dual(ds: &Dataset, w: DVector<f64>, lambda: f64, alpha: DVector<f64>) -> Result<Self> {
        check_lambda(lambda)?;
        ds.check_weights(&w)?;
        ds.check_alpha(&alpha)?;
        let conj = weighted_conjugate(ds, &w, &alpha).map_err(Error::InfiniteConjugate)?;
        let z = w.component_mul(&alpha);
        let beta = ds.transpose_times(&z).map(|v| v / lambda);
        let kz = ds.gram_times(&z);
        let margins = &kz / lambda;
        let quad = match &beta {
            Some(b) => b.norm_squared() * lambda * lambda,
            None => z.dot(&kz).max(0.0),
        };
        let beta_norm_sq = quad / (lambda * lambda);
        let primal = weighted_loss(ds, &w, &margins) + 0.5 * lambda * beta_norm_sq;
        let dual = -conj - quad / (2.0 * lambda);
        Ok(ModelState {
            alpha,
            beta,
            margins,
            beta_norm_sq,
            lambda,
            weights: w,
            primal,
            dual,
            gap: primal - dual,
            epochs: 0,
        })
    }

    pub fn relative_gap(&self) -> f64 {
        self.gap / self.primal.abs().max(1.0)
    }
}

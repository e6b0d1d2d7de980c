//! Maximization of a convex quadratic over a Euclidean ball.
//!
//! For symmetric PSD `A` the problem
//!
//! ```text
//! max  w^T A w + 2 b^T w + c   s.t.  |w - center|_2 <= S
//! ```
//!
//! is attained on the sphere. Writing `A = Q^T diag(phi) Q` and
//! `xi = -diag(phi) Q center - Q b`, every stationary point on the sphere either
//! has a multiplier `nu` solving the secular equation
//! `T(nu) = sum_i (xi_i / (nu - phi_i))^2 = S^2`, or has `nu` equal to an
//! eigenvalue whose eigenspace carries no `xi` mass; the latter leaves the
//! eigenspace coordinates free on a smaller sphere, where the objective is
//! linear. The maximum is the largest value over all such candidates.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative size below which eigenvalues are grouped into one eigenspace.
pub const EIGEN_CLUSTER_TOL: f64 = 1e-9;
/// Relative size below which a component of `xi` counts as zero.
pub const XI_ZERO_TOL: f64 = 1e-12;

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Min,
    Max,
}

/// Optimizes `a^T v` over `|v - c|_2 <= radius` by Cauchy-Schwarz.
/// A zero `a` returns `a^T c` at the center.
pub fn linear_over_ball(a: &DVector<f64>, c: &DVector<f64>, radius: f64, sense: Sense) -> (f64, DVector<f64>) {
    let base = a.dot(c);
    let norm = a.norm();
    if norm == 0.0 || radius == 0.0 {
        return (base, c.clone());
    }
    let sign = match sense {
        Sense::Max => 1.0,
        Sense::Min => -1.0,
    };
    let point = c + a * (sign * radius / norm);
    (base + sign * radius * norm, point)
}

/// `w^T A w + 2 b^T w + c`.
#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: f64,
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..j {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

impl QuadraticObjective {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, c: f64) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch {
                what: "quadratic matrix columns",
                expected: n,
                got: a.ncols(),
            });
        }
        if b.len() != n {
            return Err(Error::DimensionMismatch {
                what: "linear term",
                expected: n,
                got: b.len(),
            });
        }
        let scale = max_abs(&a);
        let asym = asymmetry(&a);
        if asym > SYMMETRY_TOL * scale.max(f64::MIN_POSITIVE) && asym > 0.0 {
            return Err(Error::NotSymmetric(asym / scale));
        }
        Ok(QuadraticObjective { a, b, c })
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn eval(&self, w: &DVector<f64>) -> f64 {
        w.dot(&(&self.a * w)) + 2.0 * self.b.dot(w) + self.c
    }
}

/// Eigendecomposition `A = Q^T diag(phi) Q` with `phi` ascending; the rows of
/// `Q` are the eigenvectors.
pub fn decompose(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            what: "matrix columns",
            expected: n,
            got: a.ncols(),
        });
    }
    let scale = max_abs(a);
    let asym = asymmetry(a);
    if asym > 0.0 && asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric(asym / scale));
    }
    if n == 0 {
        return Ok((DMatrix::zeros(0, 0), DVector::zeros(0)));
    }
    // Zero rows (e.g. samples with alpha = 0) are split off as exact
    // eigenpairs; the dense solver is only run on the remaining block.
    let active: Vec<usize> = (0..n).filter(|&i| a.row(i).iter().any(|&v| v != 0.0)).collect();
    let m = active.len();
    let mut pairs: Vec<(f64, DVector<f64>)> = Vec::with_capacity(n);
    if m > 0 {
        let sub = DMatrix::from_fn(m, m, |i, j| a[(active[i], active[j])]);
        let eig = SymmetricEigen::try_new(sub, f64::EPSILON, 0)
            .ok_or_else(|| Error::Eigen(format!("no convergence for {m}x{m} matrix")))?;
        if eig.eigenvalues.iter().chain(eig.eigenvectors.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Eigen(format!("non-finite eigenpairs for {m}x{m} matrix")));
        }
        for k in 0..m {
            let mut v = DVector::zeros(n);
            for (i, &r) in active.iter().enumerate() {
                v[r] = eig.eigenvectors[(i, k)];
            }
            pairs.push((eig.eigenvalues[k], v));
        }
    }
    let mut is_active = vec![false; n];
    for &i in &active {
        is_active[i] = true;
    }
    for i in (0..n).filter(|&i| !is_active[i]) {
        let mut v = DVector::zeros(n);
        v[i] = 1.0;
        pairs.push((0.0, v));
    }
    // stable sort keeps the split-off zero pairs in index order
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    let phi = DVector::from_iterator(n, pairs.iter().map(|p| p.0));
    let mut q = DMatrix::zeros(n, n);
    for (row, (_, v)) in pairs.iter().enumerate() {
        q.row_mut(row).copy_from(&v.transpose());
    }
    Ok((q, phi))
}

/// Data of the secular equation `T(nu) = S^2`.
#[derive(Debug, Clone)]
pub struct SecularProblem {
    /// Eigenvalues of `A`, ascending.
    pub phi: DVector<f64>,
    pub xi: DVector<f64>,
    pub radius: f64,
    /// Rows are eigenvectors, `A = Q^T diag(phi) Q`.
    pub q: DMatrix<f64>,
}

/// A root `nu = anchor + offset`; the offset is kept separately so that
/// `phi_i - nu` stays accurate next to the anchoring pole.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecularRoot {
    pub nu: f64,
    pub anchor: f64,
    pub offset: f64,
}

/// A run of eigenvalues closer than the clustering tolerance.
#[derive(Debug, Clone)]
struct Cluster {
    lo: f64,
    hi: f64,
    members: Vec<usize>,
}

fn cluster_sorted(values: &[(usize, f64)], tol: f64) -> Vec<Cluster> {
    let mut out: Vec<Cluster> = Vec::new();
    for &(i, v) in values {
        match out.last_mut() {
            Some(c) if v - c.hi <= tol => {
                c.hi = v;
                c.members.push(i);
            }
            _ => out.push(Cluster {
                lo: v,
                hi: v,
                members: vec![i],
            }),
        }
    }
    out
}

impl SecularProblem {
    pub fn new(phi: DVector<f64>, xi: DVector<f64>, radius: f64, q: DMatrix<f64>) -> Self {
        SecularProblem { phi, xi, radius, q }
    }

    /// Builds the secular data of `max q(w)` over the ball around `center`.
    pub fn from_objective(obj: &QuadraticObjective, center: &DVector<f64>, radius: f64) -> Result<Self> {
        if center.len() != obj.dim() {
            return Err(Error::DimensionMismatch {
                what: "ball center",
                expected: obj.dim(),
                got: center.len(),
            });
        }
        let (q, phi) = decompose(&obj.a)?;
        let qc = &q * center;
        let qb = &q * &obj.b;
        let xi = DVector::from_iterator(phi.len(), (0..phi.len()).map(|i| -phi[i] * qc[i] - qb[i]));
        Ok(SecularProblem { phi, xi, radius, q })
    }

    pub fn t(&self, nu: f64) -> f64 {
        self.phi
            .iter()
            .zip(self.xi.iter())
            .filter(|(_, &x)| x != 0.0)
            .map(|(&p, &x)| {
                let r = x / (nu - p);
                r * r
            })
            .sum()
    }

    fn eigen_tol(&self) -> f64 {
        let scale = self.phi.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        EIGEN_CLUSTER_TOL * scale.max(1.0)
    }

    fn xi_is_zero(&self, i: usize) -> bool {
        self.xi[i].abs() <= XI_ZERO_TOL * (1.0 + self.xi.norm())
    }

    fn eigen_clusters(&self) -> Vec<Cluster> {
        let vals: Vec<(usize, f64)> = self.phi.iter().copied().enumerate().collect();
        let mut sorted = vals;
        sorted.sort_by(|a, b| a.1.total_cmp(&b.1));
        cluster_sorted(&sorted, self.eigen_tol())
    }

    /// All roots of `T(nu) = S^2`, ascending.
    pub fn roots(&self) -> Vec<SecularRoot> {
        let s2 = self.radius * self.radius;
        if !(self.radius > 0.0) {
            return Vec::new();
        }
        let mut poles: Vec<(usize, f64)> = (0..self.phi.len())
            .filter(|&i| !self.xi_is_zero(i))
            .map(|i| (i, self.phi[i]))
            .collect();
        if poles.is_empty() {
            return Vec::new();
        }
        poles.sort_by(|a, b| a.1.total_cmp(&b.1));
        let terms: Vec<(f64, f64)> = poles.iter().map(|&(i, p)| (p, self.xi[i] * self.xi[i])).collect();
        let clusters = cluster_sorted(&poles, self.eigen_tol());
        let xi_norm = terms.iter().map(|t| t.1).sum::<f64>().sqrt();
        let reach = xi_norm / self.radius + 1.0;
        let mut roots = Vec::new();

        let first = &clusters[0];
        let f = Secular::new(&terms, first.lo);
        let mut lo = -reach;
        while f.eval(lo).0 >= s2 {
            lo *= 2.0;
        }
        roots.push(f.root(lo, 0.0, s2));

        for pair in clusters.windows(2) {
            let (left, right) = (pair[0].hi, pair[1].lo);
            let width = right - left;
            let fl = Secular::new(&terms, left);
            let dmin = fl.argmin(0.0, width);
            let tmin = fl.eval(dmin).0;
            if tmin < s2 * (1.0 - 1e-13) {
                roots.push(fl.root(0.0, dmin, s2));
                let fr = Secular::new(&terms, right);
                roots.push(fr.root(dmin - width, 0.0, s2));
            } else if tmin <= s2 * (1.0 + 1e-13) {
                roots.push(fl.point(dmin));
            }
        }

        let last = clusters.last().unwrap();
        let f = Secular::new(&terms, last.hi);
        let mut hi = reach;
        while f.eval(hi).0 >= s2 {
            hi *= 2.0;
        }
        roots.push(f.root(0.0, hi, s2));
        roots
    }
}

/// `T` evaluated as a function of the offset from an anchor pole.
struct Secular {
    anchor: f64,
    /// `(anchor - phi_i, xi_i^2)`.
    terms: Vec<(f64, f64)>,
}

impl Secular {
    fn new(terms: &[(f64, f64)], anchor: f64) -> Self {
        Secular {
            anchor,
            terms: terms.iter().map(|&(p, x2)| (anchor - p, x2)).collect(),
        }
    }

    /// `(T, T', T'')` at `nu = anchor + delta`.
    fn eval(&self, delta: f64) -> (f64, f64, f64) {
        let mut t = 0.0;
        let mut dt = 0.0;
        let mut ddt = 0.0;
        for &(d, x2) in &self.terms {
            let r = 1.0 / (d + delta);
            let r2 = r * r;
            t += x2 * r2;
            dt -= 2.0 * x2 * r2 * r;
            ddt += 6.0 * x2 * r2 * r2;
        }
        (t, dt, ddt)
    }

    fn point(&self, delta: f64) -> SecularRoot {
        SecularRoot {
            nu: self.anchor + delta,
            anchor: self.anchor,
            offset: delta,
        }
    }

    /// Root of `T = s2` in `(lo, hi)` where `T - s2` changes sign once.
    /// Newton on `1/sqrt(T) - 1/S`, which is close to linear near a pole,
    /// with bisection whenever the step leaves the bracket or stalls.
    fn root(&self, mut lo: f64, mut hi: f64, s2: f64) -> SecularRoot {
        let inv_s = 1.0 / s2.sqrt();
        let lo_above = self.eval(lo).0 > s2;
        let mut x = 0.5 * (lo + hi);
        let mut best = (f64::INFINITY, x);
        let mut last_width = hi - lo;
        for it in 0..400 {
            let (t, dt, _) = self.eval(x);
            let resid = (t - s2).abs();
            if resid < best.0 {
                best = (resid, x);
            }
            if resid <= 1e-15 * s2 {
                break;
            }
            if (t > s2) == lo_above {
                lo = x;
            } else {
                hi = x;
            }
            let width = hi - lo;
            if width <= 2.0 * f64::EPSILON * lo.abs().max(hi.abs()) || width == 0.0 {
                break;
            }
            let h = 1.0 / t.sqrt() - inv_s;
            let dh = -0.5 * dt / (t * t.sqrt());
            let newton = x - h / dh;
            let stalled = it % 4 == 3 && width > 0.5 * last_width;
            if it % 4 == 3 {
                last_width = width;
            }
            x = if newton.is_finite() && newton > lo && newton < hi && !stalled {
                newton
            } else {
                0.5 * (lo + hi)
            };
        }
        self.point(best.1)
    }

    /// Minimizer of the convex `T` on `(lo, hi)` between two poles.
    fn argmin(&self, mut lo: f64, mut hi: f64) -> f64 {
        let mut x = 0.5 * (lo + hi);
        let mut last_width = hi - lo;
        for it in 0..400 {
            let (_, dt, ddt) = self.eval(x);
            if dt == 0.0 {
                break;
            }
            if dt < 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let width = hi - lo;
            if width <= 2.0 * f64::EPSILON * lo.abs().max(hi.abs()) || width == 0.0 {
                break;
            }
            let newton = x - dt / ddt;
            let stalled = it % 4 == 3 && width > 0.5 * last_width;
            if it % 4 == 3 {
                last_width = width;
            }
            x = if newton.is_finite() && newton > lo && newton < hi && !stalled {
                newton
            } else {
                0.5 * (lo + hi)
            };
        }
        x
    }
}

/// Roots of `T(nu) = S^2`, ascending. Empty when every `xi_i` is zero.
pub fn secular_roots(sp: &SecularProblem) -> Vec<f64> {
    sp.roots().into_iter().map(|r| r.nu).collect()
}

#[derive(Debug, Clone)]
pub struct BallMaxResult {
    pub value: f64,
    pub argmax: DVector<f64>,
    /// Multiplier of the winning stationary point (`None` for the linear case).
    pub multiplier: Option<f64>,
    pub candidates_examined: usize,
}

struct Candidate {
    value: f64,
    nu: f64,
    argmax: DVector<f64>,
}

fn better(a: &Candidate, b: &Candidate) -> bool {
    match a.value.total_cmp(&b.value) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => match a.nu.total_cmp(&b.nu) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => a
                .argmax
                .iter()
                .zip(b.argmax.iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| *o != Ordering::Equal)
                == Some(Ordering::Less),
        },
    }
}

/// Exact global maximum of `obj` over `|w - center|_2 <= radius`.
pub fn maximize_over_ball(obj: &QuadraticObjective, center: &DVector<f64>, radius: f64) -> Result<BallMaxResult> {
    if center.len() != obj.dim() {
        return Err(Error::DimensionMismatch {
            what: "ball center",
            expected: obj.dim(),
            got: center.len(),
        });
    }
    if !(radius >= 0.0 && radius.is_finite()) {
        return Err(Error::InvalidParameter(format!("ball radius must be finite and nonnegative, got {radius}")));
    }
    if radius == 0.0 {
        return Ok(BallMaxResult {
            value: obj.eval(center),
            argmax: center.clone(),
            multiplier: None,
            candidates_examined: 1,
        });
    }
    if max_abs(&obj.a) == 0.0 {
        let (v, p) = linear_over_ball(&(&obj.b * 2.0), center, radius, Sense::Max);
        return Ok(BallMaxResult {
            value: v + obj.c,
            argmax: p,
            multiplier: None,
            candidates_examined: 1,
        });
    }

    let sp = SecularProblem::from_objective(obj, center, radius)?;
    let scale = sp.phi.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if sp.phi[0] < -PSD_TOL * scale {
        return Err(Error::InvalidParameter(format!(
            "quadratic matrix is not positive semidefinite (smallest eigenvalue {:e})",
            sp.phi[0]
        )));
    }
    let n = obj.dim();
    let s2 = radius * radius;
    let btc = obj.b.dot(center);
    let qb = &sp.q * &obj.b;
    let qc = &sp.q * center;
    let zero_xi: Vec<bool> = (0..n).map(|i| sp.xi_is_zero(i)).collect();

    let mut best: Option<Candidate> = None;
    let mut examined = 0usize;
    let mut infeasible = 0usize;
    let mut consider = |cand: Candidate| {
        examined += 1;
        if best.as_ref().is_none_or(|b| better(&cand, b)) {
            best = Some(cand);
        }
    };

    // stationary points with nonsingular (Phi - nu I)
    for root in sp.roots() {
        let nu = root.nu;
        let tau = DVector::from_iterator(
            n,
            (0..n).map(|i| {
                if zero_xi[i] {
                    0.0
                } else {
                    sp.xi[i] / ((sp.phi[i] - root.anchor) - root.offset)
                }
            }),
        );
        // (nu center + b)^T Q^T tau, with Q (nu center + b) = nu Qc + Qb
        let g_tau: f64 = (0..n).map(|i| (nu * qc[i] + qb[i]) * tau[i]).sum();
        let value = nu * s2 + g_tau + btc + obj.c;
        let argmax = center + sp.q.tr_mul(&tau);
        consider(Candidate { value, nu, argmax });
    }

    // nu on an eigenvalue whose eigenspace has no xi component
    for cluster in sp.eigen_clusters() {
        if !cluster.members.iter().all(|&i| zero_xi[i]) {
            continue;
        }
        let nu = cluster.members.iter().map(|&i| sp.phi[i]).sum::<f64>() / cluster.members.len() as f64;
        let in_u: Vec<bool> = {
            let mut v = vec![false; n];
            for &i in &cluster.members {
                v[i] = true;
            }
            v
        };
        let mut tau = DVector::zeros(n);
        let mut fixed_sq = 0.0;
        for i in 0..n {
            if !in_u[i] && !zero_xi[i] {
                tau[i] = sp.xi[i] / (sp.phi[i] - nu);
                fixed_sq += tau[i] * tau[i];
            }
        }
        let rest = s2 - fixed_sq;
        if rest < 0.0 {
            infeasible += 1;
            continue;
        }
        let g = DVector::from_iterator(n, (0..n).map(|i| nu * qc[i] + qb[i]));
        let fixed_part: f64 = (0..n).filter(|&i| !in_u[i]).map(|i| g[i] * tau[i]).sum();
        let g_u = DVector::from_iterator(cluster.members.len(), cluster.members.iter().map(|&i| g[i]));
        let sub_radius = rest.sqrt();
        let (lin, mut point) = linear_over_ball(&g_u, &DVector::zeros(g_u.len()), sub_radius, Sense::Max);
        if g_u.norm() == 0.0 {
            point[0] = sub_radius;
        }
        for (k, &i) in cluster.members.iter().enumerate() {
            tau[i] = point[k];
        }
        let value = nu * s2 + fixed_part + lin + btc + obj.c;
        let argmax = center + sp.q.tr_mul(&tau);
        consider(Candidate { value, nu, argmax });
    }

    let best = best.ok_or_else(|| Error::Eigen("no stationary point found on the sphere".into()))?;
    Ok(BallMaxResult {
        value: best.value,
        argmax: best.argmax,
        multiplier: Some(best.nu),
        candidates_examined: examined + infeasible,
    })
}

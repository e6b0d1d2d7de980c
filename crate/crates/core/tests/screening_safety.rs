use drsss::ball_max::{decompose, maximize_over_ball, QuadraticObjective, SecularProblem};
use drsss::screening::{dr_radius, screen_at_weight};
use drsss::{screen_dr, train, Dataset, LossKind, SolverConfig, WeightBall};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn tight() -> SolverConfig {
    SolverConfig {
        rel_gap_tol: 1e-13,
        kkt_tol: Some(1e-10),
        max_epochs: 200_000,
        ..SolverConfig::default()
    }
}

fn unit(v: &DVector<f64>) -> DVector<f64> {
    let n = v.norm();
    if n > 0.0 {
        v / n
    } else {
        let mut e = DVector::zeros(v.len());
        e[0] = 1.0;
        e
    }
}

fn toy(seed: &[f64], n: usize) -> Dataset {
    let x = DMatrix::from_fn(n, 2, |i, j| seed[(2 * i + j) % seed.len()]);
    let y = DVector::from_fn(n, |i, _| if x[(i, 0)] + 0.3 * x[(i, 1)] >= 0.0 { 1.0 } else { -1.0 });
    Dataset::new(x, y, LossKind::Hinge, true).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    /// Samples removed by DR screening have zero dual variable after retraining
    /// at any weight vector inside the ball.
    #[test]
    fn dr_screening_is_safe_under_retraining(
        seed in prop::collection::vec(-3.0f64..3.0, 24),
        dirs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 8), 5),
        lambda in 0.3f64..6.0,
        s in 0.0f64..0.9,
    ) {
        let n = 8;
        let ds = toy(&seed, n);
        let center = DVector::from_element(n, 1.0);
        let m = train(&ds, &center, lambda, &tight()).unwrap();
        let ball = WeightBall::new(center.clone(), s).unwrap();
        let cert = screen_dr(&ds, &m, &ball).unwrap();
        for dir in &dirs {
            let w = &center + unit(&DVector::from_vec(dir.clone())) * s;
            let mw = train(&ds, &w, lambda, &tight()).unwrap();
            for i in 0..n {
                if cert.mask[i] {
                    prop_assert!(mw.alpha[i] <= 1e-9, "sample {i} screened but alpha = {}", mw.alpha[i]);
                    prop_assert!(mw.margins[i] >= 1.0 - 1e-7);
                }
            }
        }
    }

    #[test]
    fn dr_mask_is_nested_and_monotone(
        seed in prop::collection::vec(-3.0f64..3.0, 24),
        dir in prop::collection::vec(-1.0f64..1.0, 8),
        lambda in 0.3f64..6.0,
        s1 in 0.0f64..0.5,
        ds_ in 0.0f64..0.5,
    ) {
        let n = 8;
        let ds = toy(&seed, n);
        let center = DVector::from_element(n, 1.0);
        let m = train(&ds, &center, lambda, &tight()).unwrap();
        let small = WeightBall::new(center.clone(), s1).unwrap();
        let large = WeightBall::new(center.clone(), s1 + ds_).unwrap();
        let c1 = screen_dr(&ds, &m, &small).unwrap();
        let c2 = screen_dr(&ds, &m, &large).unwrap();
        prop_assert!(c2.radius >= c1.radius);
        prop_assert!((0..n).all(|i| !c2.mask[i] || c1.mask[i]));
        let w = &center + unit(&DVector::from_vec(dir)) * s1;
        let per = screen_at_weight(&ds, &m, &w).unwrap();
        prop_assert!((0..n).all(|i| !c1.mask[i] || per.mask[i]));
        prop_assert!(per.radius <= c1.radius * (1.0 + 1e-12));
    }

    #[test]
    fn ball_max_dominates_sampled_points(
        b_raw in prop::collection::vec(-2.0f64..2.0, 16),
        lin in prop::collection::vec(-2.0f64..2.0, 4),
        center in prop::collection::vec(0.0f64..2.0, 4),
        samples in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 50),
        radius in 0.01f64..3.0,
    ) {
        let b = DMatrix::from_row_slice(4, 4, &b_raw);
        let a = &b * b.transpose();
        let obj = QuadraticObjective::new(a, DVector::from_vec(lin), 0.5).unwrap();
        let c = DVector::from_vec(center);
        let best = maximize_over_ball(&obj, &c, radius).unwrap();
        let scale = best.value.abs().max(1.0);
        prop_assert!(((&best.argmax - &c).norm() - radius).abs() <= 1e-9 * radius.max(1.0));
        prop_assert!((obj.eval(&best.argmax) - best.value).abs() <= 1e-10 * scale);
        for v in &samples {
            let w = &c + unit(&DVector::from_vec(v.clone())) * radius;
            prop_assert!(obj.eval(&w) <= best.value + 1e-10 * scale);
        }
    }

    #[test]
    fn ball_max_is_rotation_invariant(
        b_raw in prop::collection::vec(-2.0f64..2.0, 9),
        g_raw in prop::collection::vec(-2.0f64..2.0, 9),
        lin in prop::collection::vec(-2.0f64..2.0, 3),
        center in prop::collection::vec(-1.0f64..1.0, 3),
        radius in 0.01f64..3.0,
    ) {
        let b = DMatrix::from_row_slice(3, 3, &b_raw);
        let a = &b * b.transpose();
        let p = DMatrix::from_row_slice(3, 3, &g_raw).qr().q();
        let lin = DVector::from_vec(lin);
        let c = DVector::from_vec(center);
        let v1 = maximize_over_ball(&QuadraticObjective::new(a.clone(), lin.clone(), 0.0).unwrap(), &c, radius).unwrap().value;
        let ar = &p * &a * p.transpose();
        let ar = (&ar + ar.transpose()) * 0.5;
        let v2 = maximize_over_ball(&QuadraticObjective::new(ar, &p * &lin, 0.0).unwrap(), &(&p * &c), radius).unwrap().value;
        prop_assert!((v1 - v2).abs() <= 1e-9 * v1.abs().max(1.0), "{v1} vs {v2}");
    }

    #[test]
    fn secular_roots_solve_the_equation(
        phi in prop::collection::vec(-3.0f64..3.0, 1..6),
        xi_raw in prop::collection::vec(-2.0f64..2.0, 6),
        radius in 0.05f64..3.0,
    ) {
        let mut phi = phi;
        phi.sort_by(f64::total_cmp);
        let n = phi.len();
        let xi = DVector::from_fn(n, |i, _| xi_raw[i]);
        let sp = SecularProblem::new(DVector::from_vec(phi), xi, radius, DMatrix::identity(n, n));
        let roots = sp.roots();
        prop_assert!(roots.len() <= 2 * n);
        prop_assert!(roots.len() >= 2);
        for r in roots {
            prop_assert!((sp.t(r.nu) - radius * radius).abs() <= 1e-10 * radius * radius);
        }
    }
}

#[test]
fn decompose_handles_zero_rows() {
    // Rows of A vanish for samples whose dual variable is zero; the dense
    // eigen-solver once produced NaN eigenvectors on such matrices.
    let n = 40;
    let mut a = DMatrix::zeros(n, n);
    let active: Vec<usize> = (0..n).filter(|i| i % 3 == 0).collect();
    for &i in &active {
        for &j in &active {
            a[(i, j)] = 1.0 / (1.0 + (i as f64 - j as f64).abs()) + if i == j { 0.5 } else { 0.0 };
        }
    }
    let (q, phi) = decompose(&a).unwrap();
    assert!(q.iter().chain(phi.iter()).all(|v| v.is_finite()));
    assert!((&q * q.transpose() - DMatrix::identity(n, n)).amax() < 1e-10);
    let rebuilt = q.transpose() * DMatrix::from_diagonal(&phi) * &q;
    assert!((rebuilt - &a).amax() < 1e-10 * a.amax());
    assert!(phi.iter().zip(phi.iter().skip(1)).all(|(x, y)| x <= y));
    assert_eq!(phi.iter().filter(|&&v| v == 0.0).count(), n - active.len());
}

#[test]
fn dr_radius_at_zero_ball_is_per_weight_radius() {
    let seed = [1.5, -0.2, -1.0, 0.7, 0.3, 2.1, -2.2, -0.4, 0.9, -1.7, 2.5, 0.1];
    let ds = toy(&seed, 6);
    let center = DVector::from_element(6, 1.0);
    let m = train(&ds, &center, 1.0, &SolverConfig::default()).unwrap();
    let r0 = dr_radius(&ds, &m, &WeightBall::new(center, 0.0).unwrap()).unwrap();
    assert_eq!(r0.radius, (2.0 * m.gap / m.lambda).sqrt());
}

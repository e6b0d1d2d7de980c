//! Weight balls from class reweighting and random weights on their boundary.

use anyhow::{bail, Result};
use drsss::WeightBall;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Ball centered at all-ones whose radius equals the size of the change that
/// scales every positive sample's weight from 1 to `a`.
pub fn ball_from_class_shift(y: &DVector<f64>, a: f64) -> Result<WeightBall> {
    if !(a > 0.0 && a.is_finite()) {
        bail!("a must be positive and finite, got {a}");
    }
    let n_pos = y.iter().filter(|&&v| v == 1.0).count();
    if n_pos == 0 && a != 1.0 {
        bail!("no positive samples: the class shift is empty");
    }
    let s = (n_pos as f64).sqrt() * (a - 1.0).abs();
    Ok(WeightBall::new(DVector::from_element(y.len(), 1.0), s)?)
}

/// `center + S v / |v|` with `v` standard normal: a point on the sphere.
pub fn random_weight<R: Rng + ?Sized>(ball: &WeightBall, rng: &mut R) -> DVector<f64> {
    let n = ball.center.len();
    if ball.radius == 0.0 || n == 0 {
        return ball.center.clone();
    }
    loop {
        let v = DVector::<f64>::from_fn(n, |_, _| rng.sample(StandardNormal));
        let norm = v.norm();
        if norm > 0.0 {
            return &ball.center + v * (ball.radius / norm);
        }
    }
}

/// Independent generator for trial `index`, so results do not depend on the
/// order in which trials run.
pub fn trial_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

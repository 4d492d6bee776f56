//! Central finite differences for checking analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::corr_loss::{corr_loss, corr_loss_grad};
use crate::error::Result;
use crate::tensor::Matrix;

/// Step used by the gradient checks unless stated otherwise.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Threshold a gradient check must meet.
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Entries smaller than this fraction of the largest gradient entry are
/// compared against that floor instead of their own magnitude.
pub const RELATIVE_FLOOR: f64 = 1e-4;

/// Central differences of a scalar function with respect to every entry of `at`.
pub fn central_difference<F>(mut f: F, at: &Matrix, step: f64) -> Matrix
where
    F: FnMut(&Matrix) -> f64,
{
    let mut probe = at.clone();
    let mut out = Matrix::zeros(at.nrows(), at.ncols());
    for i in 0..at.nrows() {
        for j in 0..at.ncols() {
            let orig = probe[(i, j)];
            probe[(i, j)] = orig + step;
            let up = f(&probe);
            probe[(i, j)] = orig - step;
            let down = f(&probe);
            probe[(i, j)] = orig;
            out[(i, j)] = (up - down) / (2.0 * step);
        }
    }
    out
}

/// Largest entry-wise `|a - n| / max(|a|, |n|, floor)`, where the floor is
/// [`RELATIVE_FLOOR`] times the largest magnitude in either matrix. Any NaN
/// makes the result infinite.
pub fn max_relative_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shapes differ");
    let scale = analytic.amax().max(numeric.amax());
    let floor = (RELATIVE_FLOOR * scale).max(f64::MIN_POSITIVE);
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(a, n)| {
            let e = (a - n).abs() / a.abs().max(n.abs()).max(floor);
            if e.is_nan() {
                f64::INFINITY
            } else {
                e
            }
        })
        .fold(0.0, f64::max)
}

/// A seeded pair of `n x k` batches with partially shared structure, so the
/// canonical correlations are distinct and away from 0 and 1.
pub fn correlated_batch(n: usize, k: usize, seed: u64) -> (Matrix, Matrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Matrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let x = Matrix::from_fn(n, k, |i, j| {
        z[(i, j)] + 0.8 * rng.sample::<f64, _>(StandardNormal)
    });
    let y = Matrix::from_fn(n, k, |i, j| {
        0.5 * z[(i, (j + 1) % k)] + rng.sample::<f64, _>(StandardNormal)
    });
    (x, y)
}

/// Max relative error between the analytic correlation-loss gradient and
/// central differences, over both views of one batch.
pub fn check_corr_loss(x: &Matrix, y: &Matrix, reg_epsilon: f64) -> Result<f64> {
    let (gx, gy) = corr_loss_grad(x, y, reg_epsilon)?;
    let loss = |a: &Matrix, b: &Matrix| {
        corr_loss(a, b, reg_epsilon)
            .map(|r| r.0)
            .unwrap_or(f64::NAN)
    };
    let nx = central_difference(|m| loss(m, y), x, DEFAULT_STEP);
    let ny = central_difference(|m| loss(x, m), y, DEFAULT_STEP);
    Ok(max_relative_error(&gx, &nx).max(max_relative_error(&gy, &ny)))
}

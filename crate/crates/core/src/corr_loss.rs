//! Total-correlation loss between two batches of projections and its
//! analytic gradient.
//!
//! For centered batches `x̃` (`N x kx`) and `ỹ` (`N x ky`) the loss is
//! `-Σ σ_i(T)` with `T = Sxx^{-1/2} Sxy Syy^{-1/2}`. Writing `T = Ũ D Ṽᵀ`,
//!
//! ```text
//! Δ11 = -1/2 Sxx^{-1/2} Ũ D Ũᵀ Sxx^{-1/2}
//! Δ12 =      Sxx^{-1/2} Ũ Ṽᵀ  Syy^{-1/2}
//! ∂corr/∂x = 1/(N-1) (2 x̃ Δ11 + ỹ Δ12ᵀ)
//! ```
//!
//! and symmetrically for `y`. The gradient of the loss is the negation.

use crate::cca::WhitenedSvd;
use crate::error::{Error, Result};
use crate::tensor::{center_columns, covariance, Matrix};

#[derive(Debug, Clone)]
pub struct CorrGradWorkspace {
    pub t_matrix: Matrix,
    pub u_tilde: Matrix,
    pub v_tilde: Matrix,
    /// Singular values of `T`, descending.
    pub d: Vec<f64>,
    pub delta11: Matrix,
    pub delta12: Matrix,
    pub delta22: Matrix,
    pub n_samples: usize,
    x_centered: Matrix,
    y_centered: Matrix,
}

/// `-(sum of canonical correlations)` of the batch pair; batch means are removed internally.
pub fn corr_loss(xp: &Matrix, yp: &Matrix, reg_epsilon: f64) -> Result<(f64, CorrGradWorkspace)> {
    if xp.nrows() != yp.nrows() {
        return Err(Error::dim(format!(
            "projection batches have {} and {} rows",
            xp.nrows(),
            yp.nrows()
        )));
    }
    let (xc, _) = center_columns(xp)?;
    let (yc, _) = center_columns(yp)?;
    let cov = covariance(&xc, &yc, reg_epsilon)?;
    let w = WhitenedSvd::new(&cov)?;

    let d_diag = Matrix::from_diagonal(&nalgebra::DVector::from_vec(w.d.clone()));
    let delta11 =
        &w.sxx_inv_sqrt * &w.u_tilde * &d_diag * w.u_tilde.transpose() * &w.sxx_inv_sqrt * -0.5;
    let delta22 =
        &w.syy_inv_sqrt * &w.v_tilde * &d_diag * w.v_tilde.transpose() * &w.syy_inv_sqrt * -0.5;
    let delta12 = &w.sxx_inv_sqrt * &w.u_tilde * w.v_tilde.transpose() * &w.syy_inv_sqrt;

    let loss = -w.d.iter().sum::<f64>();
    Ok((
        loss,
        CorrGradWorkspace {
            t_matrix: w.t,
            u_tilde: w.u_tilde,
            v_tilde: w.v_tilde,
            d: w.d,
            delta11: symmetrize(delta11),
            delta12,
            delta22: symmetrize(delta22),
            n_samples: xp.nrows(),
            x_centered: xc,
            y_centered: yc,
        },
    ))
}

fn symmetrize(m: Matrix) -> Matrix {
    (&m + m.transpose()) * 0.5
}

impl CorrGradWorkspace {
    /// Gradients of the loss with respect to the raw projections.
    pub fn gradients(&self) -> (Matrix, Matrix) {
        let scale = -1.0 / (self.n_samples as f64 - 1.0);
        let gx = (&self.x_centered * &self.delta11 * 2.0
            + &self.y_centered * self.delta12.transpose())
            * scale;
        let gy =
            (&self.y_centered * &self.delta22 * 2.0 + &self.x_centered * &self.delta12) * scale;
        (gx, gy)
    }
}

/// Gradients of [`corr_loss`] with respect to `xp` and `yp`.
pub fn corr_loss_grad(xp: &Matrix, yp: &Matrix, reg_epsilon: f64) -> Result<(Matrix, Matrix)> {
    Ok(corr_loss(xp, yp, reg_epsilon)?.1.gradients())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cca::fit_cca;
    use crate::gradcheck::{
        central_difference, correlated_batch, max_relative_error, DEFAULT_STEP,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn batch(n: usize, k: usize, seed: u64) -> (Matrix, Matrix) {
        correlated_batch(n, k, seed)
    }

    fn loss(x: &Matrix, y: &Matrix, eps: f64) -> f64 {
        corr_loss(x, y, eps).unwrap().0
    }

    #[test]
    fn perfect_correlation() {
        let (x, _) = batch(20, 1, 1);
        assert!((loss(&x, &x, 0.0) + 1.0).abs() < 1e-8);
    }

    #[test]
    fn independent_large_batch_is_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Matrix::from_fn(10000, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = Matrix::from_fn(10000, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let l = loss(&x, &y, 0.0);
        assert!(l > -0.05 && l <= 0.0, "{l}");
    }

    #[test]
    fn matches_cca_correlations() {
        let (x, y) = batch(20, 2, 3);
        let model = fit_cca(&x, &y, 2, 0.0).unwrap();
        let expected: f64 = model.correlations.iter().sum();
        assert!((loss(&x, &y, 0.0) + expected).abs() < 1e-8);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for (seed, k) in [(4u64, 1usize), (5, 2), (6, 3)] {
            let (x, y) = batch(16, k, seed);
            let eps = 1e-3;
            let (gx, gy) = corr_loss_grad(&x, &y, eps).unwrap();
            let nx = central_difference(|m| loss(m, &y, eps), &x, DEFAULT_STEP);
            let ny = central_difference(|m| loss(&x, m, eps), &y, DEFAULT_STEP);
            assert!(max_relative_error(&gx, &nx) < 1e-4);
            assert!(max_relative_error(&gy, &ny) < 1e-4);
        }
    }

    #[test]
    fn halved_cross_term_fails_finite_differences() {
        // The variant with an extra -1/2 on Δ12 is not the gradient of the loss.
        let (x, y) = batch(16, 2, 7);
        let (_, ws) = corr_loss(&x, &y, 1e-3).unwrap();
        let scale = -1.0 / 15.0;
        let halved = (&ws.x_centered * &ws.delta11 * 2.0
            + &ws.y_centered * ws.delta12.transpose() * -0.5)
            * scale;
        let nx = central_difference(|m| loss(m, &y, 1e-3), &x, DEFAULT_STEP);
        assert!(max_relative_error(&halved, &nx) > 1e-2);
    }

    #[test]
    fn stationary_at_perfect_correlation() {
        let (x, _) = batch(32, 1, 8);
        let (gx, gy) = corr_loss_grad(&x, &x, 1e-4).unwrap();
        assert!(gx.norm() < 1e-3 && gy.norm() < 1e-3);
    }

    #[test]
    fn gradient_orthogonal_to_centered_batch() {
        let (x, y) = batch(16, 3, 9);
        let (gx, gy) = corr_loss_grad(&x, &y, 0.0).unwrap();
        let (xc, _) = center_columns(&x).unwrap();
        let (yc, _) = center_columns(&y).unwrap();
        assert!(gx.dot(&xc).abs() < 1e-8);
        assert!(gy.dot(&yc).abs() < 1e-8);
        // raw batch too, since gradients have zero column sums
        assert!(gx.dot(&x).abs() < 1e-8);
    }

    #[test]
    fn symmetric_in_views() {
        let (x, y) = batch(16, 2, 10);
        assert!((loss(&x, &y, 1e-4) - loss(&y, &x, 1e-4)).abs() < 1e-10);
    }

    #[test]
    fn workspace_invariants() {
        let (x, y) = batch(16, 3, 11);
        let (_, ws) = corr_loss(&x, &y, 1e-4).unwrap();
        assert!(ws.d.windows(2).all(|w| w[0] >= w[1]));
        assert!(ws.d.iter().all(|&v| v >= 0.0));
        assert!((&ws.delta11 - ws.delta11.transpose()).amax() < 1e-8);
    }

    #[test]
    fn small_batch_is_singular_without_ridge() {
        let (x, y) = batch(3, 3, 12);
        assert!(matches!(
            corr_loss(&x, &y, 0.0),
            Err(Error::Singular { .. })
        ));
    }
}

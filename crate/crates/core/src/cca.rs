//! Closed-form linear canonical correlation analysis.
//!
//! The fitted transforms come from the whitened cross-covariance
//! `T = Sxx^{-1/2} Sxy Syy^{-1/2}`: with `T = Ũ D Ṽᵀ`, the transforms are
//! `U = Sxx^{-1/2} Ũ_k` and `V = Syy^{-1/2} Ṽ_k`, and the canonical
//! correlations are the top `k` singular values.

use nalgebra::SVD;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{
    center_columns, covariance, inv_sqrt_sym, serde_matrix, serde_vector, subtract_row,
    CovarianceSet, Matrix, Vector,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcaModel {
    /// `dx x k`
    #[serde(with = "serde_matrix")]
    pub u: Matrix,
    /// `dy x k`
    #[serde(with = "serde_matrix")]
    pub v: Matrix,
    /// Descending canonical correlations of the regularized problem.
    pub correlations: Vec<f64>,
    #[serde(with = "serde_vector")]
    pub mean_x: Vector,
    #[serde(with = "serde_vector")]
    pub mean_y: Vector,
    pub reg_epsilon: f64,
}

/// The SVD of the whitened cross-covariance, sorted by descending singular value.
#[derive(Debug, Clone)]
pub(crate) struct WhitenedSvd {
    pub sxx_inv_sqrt: Matrix,
    pub syy_inv_sqrt: Matrix,
    pub t: Matrix,
    /// `dx x r` with `r = min(dx, dy)`
    pub u_tilde: Matrix,
    /// `dy x r`
    pub v_tilde: Matrix,
    pub d: Vec<f64>,
}

impl WhitenedSvd {
    pub fn new(cov: &CovarianceSet) -> Result<Self> {
        let sxx_inv_sqrt = inv_sqrt_sym(&cov.sxx)?;
        let syy_inv_sqrt = inv_sqrt_sym(&cov.syy)?;
        let t = &sxx_inv_sqrt * &cov.sxy * &syy_inv_sqrt;
        let svd = SVD::new(t.clone(), true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(Error::degenerate("SVD did not return singular vectors")),
        };
        let values = svd.singular_values;
        let mut order: Vec<usize> = (0..values.len()).collect();
        // Stable: equal singular values keep the decomposition's order.
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
        let r = order.len();
        let mut u_tilde = Matrix::zeros(u.nrows(), r);
        let mut v_tilde = Matrix::zeros(v_t.ncols(), r);
        for (dst, &src) in order.iter().enumerate() {
            u_tilde.set_column(dst, &u.column(src));
            v_tilde.set_column(dst, &v_t.row(src).transpose());
        }
        let d = order.iter().map(|&i| values[i]).collect();
        Ok(Self {
            sxx_inv_sqrt,
            syy_inv_sqrt,
            t,
            u_tilde,
            v_tilde,
            d,
        })
    }

    /// The top-`k` transform pair, sign-fixed so each column of `U` has a
    /// positive largest-magnitude entry; `V` flips with it.
    pub fn transforms(&self, k: usize) -> (Matrix, Matrix) {
        let mut u = &self.sxx_inv_sqrt * self.u_tilde.columns(0, k);
        let mut v = &self.syy_inv_sqrt * self.v_tilde.columns(0, k);
        for j in 0..k {
            if column_needs_flip(&u, j) {
                u.column_mut(j).neg_mut();
                v.column_mut(j).neg_mut();
            }
        }
        (u, v)
    }
}

fn column_needs_flip(m: &Matrix, j: usize) -> bool {
    let mut best = 0.0f64;
    for &x in m.column(j).iter() {
        if x.abs() > best.abs() {
            best = x;
        }
    }
    best < 0.0
}

/// Solves CCA on precomputed covariances; returns `(u, v, correlations)`.
pub fn solve_from_covariance(cov: &CovarianceSet, k: usize) -> Result<(Matrix, Matrix, Vec<f64>)> {
    let (dx, dy) = cov.sxy.shape();
    check_k(k, dx, dy)?;
    let w = WhitenedSvd::new(cov)?;
    let (u, v) = w.transforms(k);
    Ok((u, v, w.d[..k].to_vec()))
}

fn check_k(k: usize, dx: usize, dy: usize) -> Result<()> {
    if k == 0 || k > dx.min(dy) {
        return Err(Error::param(format!(
            "k = {k} must lie in 1..={} for views of width {dx} and {dy}",
            dx.min(dy)
        )));
    }
    Ok(())
}

/// Fits the top-`k` canonical pair on samples-as-rows views `x` (`N x dx`) and `y` (`N x dy`).
pub fn fit_cca(x: &Matrix, y: &Matrix, k: usize, reg_epsilon: f64) -> Result<CcaModel> {
    if x.nrows() != y.nrows() {
        return Err(Error::dim(format!(
            "views have {} and {} samples",
            x.nrows(),
            y.nrows()
        )));
    }
    check_k(k, x.ncols(), y.ncols())?;
    let (xc, mean_x) = center_columns(x)?;
    let (yc, mean_y) = center_columns(y)?;
    let cov = covariance(&xc, &yc, reg_epsilon)?;
    let (u, v, correlations) = solve_from_covariance(&cov, k)?;
    Ok(CcaModel {
        u,
        v,
        correlations,
        mean_x,
        mean_y,
        reg_epsilon,
    })
}

impl CcaModel {
    pub fn k(&self) -> usize {
        self.u.ncols()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.u.nrows(), self.v.nrows())
    }

    /// `(x - mean_x) * u`
    pub fn project_x(&self, x: &Matrix) -> Result<Matrix> {
        if x.ncols() != self.u.nrows() {
            return Err(Error::dim(format!(
                "x has {} columns, model expects {}",
                x.ncols(),
                self.u.nrows()
            )));
        }
        Ok(subtract_row(x, &self.mean_x) * &self.u)
    }

    /// `(y - mean_y) * v`
    pub fn project_y(&self, y: &Matrix) -> Result<Matrix> {
        if y.ncols() != self.v.nrows() {
            return Err(Error::dim(format!(
                "y has {} columns, model expects {}",
                y.ncols(),
                self.v.nrows()
            )));
        }
        Ok(subtract_row(y, &self.mean_y) * &self.v)
    }

    pub fn project(&self, x: &Matrix, y: &Matrix) -> Result<(Matrix, Matrix)> {
        Ok((self.project_x(x)?, self.project_y(y)?))
    }
}

/// Pearson correlation of two equally long samples.
pub fn canonical_correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim(format!("lengths {} and {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::degenerate("correlation needs at least 2 samples"));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::degenerate("correlation of a zero-variance sample"));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

//! Dense matrix primitives shared by every estimator in the crate.
//!
//! Data matrices are laid out samples-as-rows: an `N x d` matrix holds `N`
//! observations of a `d`-dimensional variable. Transforms are `d x k` and
//! project with a right multiplication, `(x - mean) * u`.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Ridge added to both auto-covariances unless the caller asks otherwise.
pub const DEFAULT_REG_EPSILON: f64 = 1e-4;

/// Eigenvalues at or below this are treated as singular by [`inv_sqrt_sym`].
pub const SINGULAR_TOLERANCE: f64 = 1e-12;

/// Builds a matrix from row-major values, rejecting empty shapes and non-finite entries.
pub fn matrix_from_rows(rows: usize, cols: usize, data: &[f64]) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::dim(format!(
            "matrix shape {rows}x{cols} has an empty axis"
        )));
    }
    if data.len() != rows * cols {
        return Err(Error::dim(format!(
            "{} values cannot fill a {rows}x{cols} matrix",
            data.len()
        )));
    }
    let m = Matrix::from_row_slice(rows, cols, data);
    ensure_finite(&m, "matrix")?;
    Ok(m)
}

/// Row-major copy of the matrix values.
pub fn to_row_major(m: &Matrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if let Some(pos) = m.iter().position(|v| !v.is_finite()) {
        let (r, c) = (pos % m.nrows(), pos / m.nrows());
        return Err(Error::NonFinite(format!(
            "{what} entry ({r}, {c}) is {}",
            m[(r, c)]
        )));
    }
    Ok(())
}

/// Per-column sample means.
pub fn column_means(x: &Matrix) -> Vector {
    let n = x.nrows() as f64;
    Vector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

/// Subtracts the per-column mean; returns the centered matrix and the mean.
pub fn center_columns(x: &Matrix) -> Result<(Matrix, Vector)> {
    if x.nrows() < 2 {
        return Err(Error::degenerate(format!(
            "centering needs at least 2 rows, got {}",
            x.nrows()
        )));
    }
    let mean = column_means(x);
    Ok((subtract_row(x, &mean), mean))
}

/// `x - 1 * meanᵀ`.
pub fn subtract_row(x: &Matrix, mean: &Vector) -> Matrix {
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    out
}

/// Regularized second moments of two centered views.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSet {
    pub sxx: Matrix,
    pub syy: Matrix,
    /// Cross-covariance `dx x dy`; the `dy x dx` block is its transpose.
    pub sxy: Matrix,
    pub reg_epsilon: f64,
    pub n_samples: usize,
}

impl CovarianceSet {
    pub fn syx(&self) -> Matrix {
        self.sxy.transpose()
    }
}

/// Sample covariances with divisor `N - 1` and `reg_epsilon * I` on both auto-covariances.
pub fn covariance(xc: &Matrix, yc: &Matrix, reg_epsilon: f64) -> Result<CovarianceSet> {
    if xc.nrows() != yc.nrows() {
        return Err(Error::dim(format!(
            "views have {} and {} rows",
            xc.nrows(),
            yc.nrows()
        )));
    }
    if !(reg_epsilon >= 0.0 && reg_epsilon.is_finite()) {
        return Err(Error::param(format!(
            "reg_epsilon must be finite and >= 0, got {reg_epsilon}"
        )));
    }
    let n = xc.nrows();
    if n < 2 {
        return Err(Error::degenerate(format!(
            "covariance needs at least 2 samples, got {n}"
        )));
    }
    let scale = 1.0 / (n as f64 - 1.0);
    let mut sxx = xc.tr_mul(xc) * scale;
    let mut syy = yc.tr_mul(yc) * scale;
    let sxy = xc.tr_mul(yc) * scale;
    add_ridge(&mut sxx, reg_epsilon);
    add_ridge(&mut syy, reg_epsilon);
    Ok(CovarianceSet {
        sxx,
        syy,
        sxy,
        reg_epsilon,
        n_samples: n,
    })
}

pub(crate) fn add_ridge(m: &mut Matrix, eps: f64) {
    for i in 0..m.nrows() {
        m[(i, i)] += eps;
    }
}

/// `a^{-1/2}` for a symmetric positive definite `a`, via its eigendecomposition.
pub fn inv_sqrt_sym(a: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::dim(format!(
            "inverse square root of a {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    ensure_finite(a, "inv_sqrt_sym input")?;
    let scale = a.amax().max(1.0);
    let asym = (a - a.transpose()).amax();
    if asym > 1e-10 * scale {
        return Err(Error::param(format!(
            "matrix is not symmetric (max |a - aᵀ| = {asym:e})"
        )));
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    if let Some(&bad) = eig
        .eigenvalues
        .iter()
        .filter(|&&l| l <= SINGULAR_TOLERANCE)
        .min_by(|a, b| a.total_cmp(b))
    {
        return Err(Error::Singular {
            eigenvalue: bad,
            tolerance: SINGULAR_TOLERANCE,
        });
    }
    let q = &eig.eigenvectors;
    let scaled = Vector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|l| 1.0 / l.sqrt()),
    );
    let b = q * Matrix::from_diagonal(&scaled) * q.transpose();
    Ok((&b + b.transpose()) * 0.5)
}

/// A batch of equally shaped 2-D samples (feature maps).
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixStack {
    rows: usize,
    cols: usize,
    items: Vec<Matrix>,
}

impl MatrixStack {
    pub fn new(items: Vec<Matrix>) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::dim("matrix stack must hold at least one matrix"))?;
        let (rows, cols) = first.shape();
        if rows == 0 || cols == 0 {
            return Err(Error::dim("matrix stack entries must be non-empty"));
        }
        for (t, m) in items.iter().enumerate() {
            if m.shape() != (rows, cols) {
                return Err(Error::dim(format!(
                    "stack entry {t} is {:?}, expected {:?}",
                    m.shape(),
                    (rows, cols)
                )));
            }
            ensure_finite(m, &format!("stack entry {t}"))?;
        }
        Ok(Self { rows, cols, items })
    }

    /// `n` matrices of `rows x cols` from one row-major buffer (sample-major).
    pub fn from_row_major(n: usize, rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != n * rows * cols {
            return Err(Error::dim(format!(
                "{} values cannot fill a {n}x{rows}x{cols} stack",
                data.len()
            )));
        }
        let stride = rows * cols;
        let items = (0..n)
            .map(|t| matrix_from_rows(rows, cols, &data[t * stride..(t + 1) * stride]))
            .collect::<Result<Vec<_>>>()?;
        Self::new(items)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn items(&self) -> &[Matrix] {
        &self.items
    }

    pub fn get(&self, t: usize) -> &Matrix {
        &self.items[t]
    }

    pub fn into_items(self) -> Vec<Matrix> {
        self.items
    }

    /// Element-wise mean over the stack.
    pub fn mean(&self) -> Matrix {
        let mut acc = Matrix::zeros(self.rows, self.cols);
        for m in &self.items {
            acc += m;
        }
        acc / self.items.len() as f64
    }

    /// Each entry minus the element-wise stack mean.
    pub fn centered(&self) -> (Vec<Matrix>, Matrix) {
        let mean = self.mean();
        (self.items.iter().map(|m| m - &mean).collect(), mean)
    }

    /// Flattens every sample row-major into one row of an `n x (rows*cols)` matrix.
    pub fn flatten(&self) -> Matrix {
        let width = self.rows * self.cols;
        let mut out = Matrix::zeros(self.items.len(), width);
        for (t, m) in self.items.iter().enumerate() {
            for (j, v) in to_row_major(m).into_iter().enumerate() {
                out[(t, j)] = v;
            }
        }
        out
    }

    pub fn select(&self, indices: &[usize]) -> MatrixStack {
        MatrixStack {
            rows: self.rows,
            cols: self.cols,
            items: indices.iter().map(|&i| self.items[i].clone()).collect(),
        }
    }
}

/// Serde adapter writing a matrix as `{rows, cols, data}` with row-major `data`.
pub mod serde_matrix {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::{matrix_from_rows, to_row_major, Matrix};

    #[derive(Serialize, Deserialize)]
    struct Repr {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
        Repr {
            rows: m.nrows(),
            cols: m.ncols(),
            data: to_row_major(m),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
        let r = Repr::deserialize(d)?;
        matrix_from_rows(r.rows, r.cols, &r.data).map_err(serde::de::Error::custom)
    }
}

/// Serde adapter for vectors as plain JSON arrays.
pub mod serde_vector {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::Vector;

    pub fn serialize<S: Serializer>(v: &Vector, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vector, D::Error> {
        Ok(Vector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

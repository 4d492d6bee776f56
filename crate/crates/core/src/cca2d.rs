//! Two-dimensional CCA by alternating optimization.
//!
//! Every sample is a matrix. The model holds a left/right transform pair per
//! view, projecting `X_t` (`m_x x n_x`) to `Lxᵀ (X_t - mean_x) Rx` (`d1 x d2`).
//! There is no closed form: with the right transforms fixed, the row-side
//! covariances
//!
//! ```text
//! Sxx = 1/(N-1) Σ_t X̃_t Rx Rxᵀ X̃_tᵀ + εI
//! Sxy = 1/(N-1) Σ_t X̃_t Rx Ryᵀ Ỹ_tᵀ
//! Syy = 1/(N-1) Σ_t Ỹ_t Ry Ryᵀ Ỹ_tᵀ + εI
//! ```
//!
//! define an ordinary CCA problem whose top-`d1` solution gives `(Lx, Ly)`.
//! The right transforms are then refit from the column-side analogues with
//! the left transforms fixed, and so on.
//!
//! Progress is measured by the sum of canonical correlations between the
//! vectorized projections of both views. A half-step that would lower it is
//! rejected, so the recorded objective never decreases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cca::{fit_cca, solve_from_covariance};
use crate::error::{Error, Result};
use crate::tensor::{add_ridge, serde_matrix, CovarianceSet, Matrix, MatrixStack};

pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitMode {
    /// First `d2` columns of the identity for both right transforms.
    IdentitySlice,
    /// Entries drawn uniformly from `[-1, 1)` with the given seed.
    Uniform { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cca2dOptions {
    pub d1: usize,
    pub d2: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub reg_epsilon: f64,
    pub init: InitMode,
}

impl Cca2dOptions {
    pub fn new(d1: usize, d2: usize) -> Self {
        Self {
            d1,
            d2,
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
            reg_epsilon: crate::tensor::DEFAULT_REG_EPSILON,
            init: InitMode::IdentitySlice,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cca2dModel {
    #[serde(with = "serde_matrix")]
    pub lx: Matrix,
    #[serde(with = "serde_matrix")]
    pub rx: Matrix,
    #[serde(with = "serde_matrix")]
    pub ly: Matrix,
    #[serde(with = "serde_matrix")]
    pub ry: Matrix,
    #[serde(with = "serde_matrix")]
    pub mean_x: Matrix,
    #[serde(with = "serde_matrix")]
    pub mean_y: Matrix,
    /// Objective after every half-step (left update, then right update).
    pub objective_trace: Vec<f64>,
    /// Half-steps that were rejected because they lowered the objective.
    pub rejected_steps: usize,
    pub iterations: usize,
    pub converged: bool,
    pub reg_epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    X,
    Y,
}

struct Transforms {
    lx: Matrix,
    rx: Matrix,
    ly: Matrix,
    ry: Matrix,
}

pub fn fit_2dcca(xs: &MatrixStack, ys: &MatrixStack, opts: &Cca2dOptions) -> Result<Cca2dModel> {
    let n = xs.len();
    if ys.len() != n {
        return Err(Error::dim(format!(
            "stacks hold {n} and {} samples",
            ys.len()
        )));
    }
    if n < 2 {
        return Err(Error::degenerate(format!(
            "2D-CCA needs at least 2 samples, got {n}"
        )));
    }
    let (mx, nx) = xs.shape();
    let (my, ny) = ys.shape();
    let (d1, d2) = (opts.d1, opts.d2);
    if d1 == 0 || d1 > mx.min(my) {
        return Err(Error::param(format!(
            "d1 = {d1} must lie in 1..={}",
            mx.min(my)
        )));
    }
    if d2 == 0 || d2 > nx.min(ny) {
        return Err(Error::param(format!(
            "d2 = {d2} must lie in 1..={}",
            nx.min(ny)
        )));
    }
    if opts.max_iters == 0 {
        return Err(Error::param("max_iters must be at least 1"));
    }
    if !(opts.tol >= 0.0) {
        return Err(Error::param(format!("tol must be >= 0, got {}", opts.tol)));
    }

    let (xc, mean_x) = xs.centered();
    let (yc, mean_y) = ys.centered();
    let eps = opts.reg_epsilon;

    let (rx, ry) = match opts.init {
        InitMode::IdentitySlice => (Matrix::identity(nx, d2), Matrix::identity(ny, d2)),
        InitMode::Uniform { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rx = Matrix::from_fn(nx, d2, |_, _| rng.random_range(-1.0..1.0));
            let ry = Matrix::from_fn(ny, d2, |_, _| rng.random_range(-1.0..1.0));
            (rx, ry)
        }
    };

    // The first left update always runs; there is no left pair to compare against yet.
    let (lx, ly) = left_step(&xc, &yc, &rx, &ry, d1, eps)?;
    let mut cur = Transforms { lx, rx, ly, ry };
    let mut best = objective(&xc, &yc, &cur, eps)?;
    let mut trace = vec![best];
    let mut rejected = 0;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..opts.max_iters {
        iterations = iter + 1;
        let start = best;

        if iter > 0 {
            let (lx, ly) = left_step(&xc, &yc, &cur.rx, &cur.ry, d1, eps)?;
            let cand = Transforms {
                lx,
                ly,
                rx: cur.rx.clone(),
                ry: cur.ry.clone(),
            };
            accept_if_better(&xc, &yc, cand, &mut cur, &mut best, &mut rejected, eps)?;
            trace.push(best);
        }

        let (rx, ry) = right_step(&xc, &yc, &cur.lx, &cur.ly, d2, eps)?;
        let cand = Transforms {
            lx: cur.lx.clone(),
            ly: cur.ly.clone(),
            rx,
            ry,
        };
        accept_if_better(&xc, &yc, cand, &mut cur, &mut best, &mut rejected, eps)?;
        trace.push(best);

        if iter > 0 && (best - start).abs() <= opts.tol * start.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }

    Ok(Cca2dModel {
        lx: cur.lx,
        rx: cur.rx,
        ly: cur.ly,
        ry: cur.ry,
        mean_x,
        mean_y,
        objective_trace: trace,
        rejected_steps: rejected,
        iterations,
        converged,
        reg_epsilon: eps,
    })
}

fn accept_if_better(
    xc: &[Matrix],
    yc: &[Matrix],
    cand: Transforms,
    cur: &mut Transforms,
    best: &mut f64,
    rejected: &mut usize,
    eps: f64,
) -> Result<()> {
    let value = objective(xc, yc, &cand, eps)?;
    if value >= *best {
        *cur = cand;
        *best = value;
    } else {
        *rejected += 1;
    }
    Ok(())
}

/// Row-side CCA with the right transforms fixed.
fn left_step(
    xc: &[Matrix],
    yc: &[Matrix],
    rx: &Matrix,
    ry: &Matrix,
    d1: usize,
    eps: f64,
) -> Result<(Matrix, Matrix)> {
    let xr: Vec<Matrix> = xc.iter().map(|x| x * rx).collect();
    let yr: Vec<Matrix> = yc.iter().map(|y| y * ry).collect();
    let cov = side_covariance(&xr, &yr, eps, |a, b| a * b.transpose());
    let (l_x, l_y, _) = solve_from_covariance(&cov, d1)?;
    Ok((l_x, l_y))
}

/// Column-side CCA with the left transforms fixed.
fn right_step(
    xc: &[Matrix],
    yc: &[Matrix],
    lx: &Matrix,
    ly: &Matrix,
    d2: usize,
    eps: f64,
) -> Result<(Matrix, Matrix)> {
    let xl: Vec<Matrix> = xc.iter().map(|x| x.tr_mul(lx)).collect();
    let yl: Vec<Matrix> = yc.iter().map(|y| y.tr_mul(ly)).collect();
    let cov = side_covariance(&xl, &yl, eps, |a, b| a * b.transpose());
    let (r_x, r_y, _) = solve_from_covariance(&cov, d2)?;
    Ok((r_x, r_y))
}

/// Sums `outer(a_t, b_t)` over the half-projected samples, divisor `N - 1`.
fn side_covariance<F>(a: &[Matrix], b: &[Matrix], eps: f64, outer: F) -> CovarianceSet
where
    F: Fn(&Matrix, &Matrix) -> Matrix,
{
    let n = a.len();
    let (pa, pb) = (a[0].nrows(), b[0].nrows());
    let mut sxx = Matrix::zeros(pa, pa);
    let mut syy = Matrix::zeros(pb, pb);
    let mut sxy = Matrix::zeros(pa, pb);
    for (at, bt) in a.iter().zip(b) {
        sxx += outer(at, at);
        syy += outer(bt, bt);
        sxy += outer(at, bt);
    }
    let scale = 1.0 / (n as f64 - 1.0);
    sxx *= scale;
    syy *= scale;
    sxy *= scale;
    // Exact symmetry for the eigensolver.
    sxx = (&sxx + sxx.transpose()) * 0.5;
    syy = (&syy + syy.transpose()) * 0.5;
    add_ridge(&mut sxx, eps);
    add_ridge(&mut syy, eps);
    CovarianceSet {
        sxx,
        syy,
        sxy,
        reg_epsilon: eps,
        n_samples: n,
    }
}

fn objective(xc: &[Matrix], yc: &[Matrix], t: &Transforms, eps: f64) -> Result<f64> {
    let px = vectorize(xc.iter().map(|x| t.lx.transpose() * x * &t.rx));
    let py = vectorize(yc.iter().map(|y| t.ly.transpose() * y * &t.ry));
    let k = px.ncols();
    Ok(fit_cca(&px, &py, k, eps)?.correlations.iter().sum())
}

/// One row per sample, each the row-major flattening of its matrix.
fn vectorize(items: impl Iterator<Item = Matrix>) -> Matrix {
    let rows: Vec<Vec<f64>> = items.map(|m| crate::tensor::to_row_major(&m)).collect();
    let width = rows[0].len();
    Matrix::from_fn(rows.len(), width, |i, j| rows[i][j])
}

impl Cca2dModel {
    pub fn dims(&self) -> (usize, usize) {
        (self.lx.ncols(), self.rx.ncols())
    }

    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().unwrap_or(&0.0)
    }

    fn parts(&self, view: View) -> (&Matrix, &Matrix, &Matrix) {
        match view {
            View::X => (&self.lx, &self.rx, &self.mean_x),
            View::Y => (&self.ly, &self.ry, &self.mean_y),
        }
    }

    /// `Lᵀ (x - mean) R` for the chosen view.
    pub fn project(&self, x: &Matrix, view: View) -> Result<Matrix> {
        let (l, r, mean) = self.parts(view);
        if x.shape() != mean.shape() {
            return Err(Error::dim(format!(
                "{view:?} sample is {:?}, model expects {:?}",
                x.shape(),
                mean.shape()
            )));
        }
        Ok(l.transpose() * (x - mean) * r)
    }

    pub fn project_stack(&self, stack: &MatrixStack, view: View) -> Result<MatrixStack> {
        let items = stack
            .items()
            .iter()
            .map(|x| self.project(x, view))
            .collect::<Result<Vec<_>>>()?;
        MatrixStack::new(items)
    }
}

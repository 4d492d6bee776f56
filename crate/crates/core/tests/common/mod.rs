//! Reference implementations shared by the integration tests.
#![allow(dead_code)]

use ccafuse::{Matrix, MatrixStack};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn normal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Sliding-window SSIM with every window's moments summed directly.
pub fn naive_ssim(a: &Matrix, b: &Matrix, win: usize, c1: f64, c2: f64) -> f64 {
    let (h, w) = a.shape();
    let m = (win * win) as f64;
    let mut total = 0.0;
    let mut count = 0.0;
    for i in 0..=h - win {
        for j in 0..=w - win {
            let (mut ma, mut mb) = (0.0, 0.0);
            for di in 0..win {
                for dj in 0..win {
                    ma += a[(i + di, j + dj)];
                    mb += b[(i + di, j + dj)];
                }
            }
            ma /= m;
            mb /= m;
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for di in 0..win {
                for dj in 0..win {
                    let da = a[(i + di, j + dj)] - ma;
                    let db = b[(i + di, j + dj)] - mb;
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
            }
            va /= m;
            vb /= m;
            cov /= m;
            total += (2.0 * ma * mb + c1) * (2.0 * cov + c2)
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1.0;
        }
    }
    total / count
}

pub fn sample_cov(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.nrows();
    let ca = Matrix::from_fn(n, a.ncols(), |i, j| a[(i, j)] - a.column(j).mean());
    let cb = Matrix::from_fn(n, b.ncols(), |i, j| b[(i, j)] - b.column(j).mean());
    ca.transpose() * cb / (n as f64 - 1.0)
}

/// Maximizes `uᵀ Sxy v` subject to `uᵀ Sxx u = vᵀ Syy v = 1` by gradient
/// steps on the Lagrangian followed by rescaling back onto the constraint
/// set.
pub fn projected_ascent(
    sxx: &Matrix,
    syy: &Matrix,
    sxy: &Matrix,
    restarts: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let rescale = |u: Matrix, s: &Matrix| {
        let q = (u.transpose() * s * &u)[(0, 0)];
        u / q.sqrt()
    };
    let step = 1.0 / sxy.norm().max(1e-12);
    let mut best = f64::NEG_INFINITY;
    for _ in 0..restarts {
        let mut u = rescale(normal(sxx.nrows(), 1, rng), sxx);
        let mut v = rescale(normal(syy.nrows(), 1, rng), syy);
        let mut obj = (u.transpose() * sxy * &v)[(0, 0)];
        for _ in 0..20000 {
            // Lagrangian gradient: zero exactly at the constrained KKT points.
            let gu = sxy * &v - sxx * &u * obj;
            let gv = sxy.transpose() * &u - syy * &v * obj;
            u = rescale(&u + gu * step, sxx);
            v = rescale(&v + gv * step, syy);
            let next = (u.transpose() * sxy * &v)[(0, 0)];
            let done = (next - obj).abs() < 1e-15;
            obj = next;
            if done {
                break;
            }
        }
        best = best.max(obj);
    }
    best
}

/// A seeded two-view stack pair `X_t = A S_t Bᵀ + noise`, `Y_t = C S_t Eᵀ + noise`
/// sharing a 2 x 2 latent `S_t`.
pub fn planted_maps(n: usize, noise: f64, seed: u64) -> (MatrixStack, MatrixStack) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b) = (normal(6, 2, &mut rng), normal(5, 2, &mut rng));
    let (c, e) = (normal(5, 2, &mut rng), normal(4, 2, &mut rng));
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for _ in 0..n {
        let s = normal(2, 2, &mut rng);
        xs.push(&a * &s * b.transpose() + normal(6, 5, &mut rng) * noise);
        ys.push(&c * &s * e.transpose() + normal(5, 4, &mut rng) * noise);
    }
    (MatrixStack::new(xs).unwrap(), MatrixStack::new(ys).unwrap())
}

/// Each row of `m` as a column-vector sample.
pub fn column_stack(m: &Matrix) -> MatrixStack {
    MatrixStack::new(
        m.row_iter()
            .map(|r| Matrix::from_iterator(r.len(), 1, r.iter().copied()))
            .collect(),
    )
    .unwrap()
}

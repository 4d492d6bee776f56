//! Depth-map comparison losses: point-wise L1, image-gradient difference,
//! SSIM, and their weighted sum `λ·L1 + L_grad + (1 - SSIM) / 2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Weight on the L1 term unless overridden.
pub const DEFAULT_LAMBDA: f64 = 0.1;
pub const DEFAULT_WINDOW: usize = 7;
/// Dynamic range used for the default SSIM constants.
pub const DEFAULT_DYNAMIC_RANGE: f64 = 1.0;

/// A depth map, `height x width`, at least 2x2.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage(Matrix);

impl DepthImage {
    pub fn new(values: Matrix) -> Result<Self> {
        if values.nrows() < 2 || values.ncols() < 2 {
            return Err(Error::dim(format!(
                "depth image must be at least 2x2, got {:?}",
                values.shape()
            )));
        }
        crate::tensor::ensure_finite(&values, "depth image")?;
        Ok(Self(values))
    }

    pub fn height(&self) -> usize {
        self.0.nrows()
    }

    pub fn width(&self) -> usize {
        self.0.ncols()
    }

    pub fn values(&self) -> &Matrix {
        &self.0
    }

    fn pixels(&self) -> f64 {
        self.0.len() as f64
    }
}

/// SSIM stabilizing constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub c1: f64,
    pub c2: f64,
}

impl SsimParams {
    /// `c1 = (0.01 L)^2`, `c2 = (0.03 L)^2` for dynamic range `L`.
    pub fn for_range(window: usize, dynamic_range: f64) -> Self {
        Self {
            window,
            c1: (0.01 * dynamic_range).powi(2),
            c2: (0.03 * dynamic_range).powi(2),
        }
    }
}

impl Default for SsimParams {
    fn default() -> Self {
        Self::for_range(DEFAULT_WINDOW, DEFAULT_DYNAMIC_RANGE)
    }
}

fn same_shape(a: &DepthImage, b: &DepthImage) -> Result<()> {
    if a.0.shape() != b.0.shape() {
        return Err(Error::dim(format!(
            "depth images are {:?} and {:?}",
            a.0.shape(),
            b.0.shape()
        )));
    }
    Ok(())
}

pub fn l1_depth(y: &DepthImage, yhat: &DepthImage) -> Result<f64> {
    same_shape(y, yhat)?;
    let sum: f64 =
        y.0.iter()
            .zip(yhat.0.iter())
            .map(|(a, b)| (a - b).abs())
            .sum();
    Ok(sum / y.pixels())
}

/// Mean of `|∂x y - ∂x ŷ| + |∂y y - ∂y ŷ|` with forward differences; the
/// difference past the last row/column is taken as zero.
pub fn grad_loss(y: &DepthImage, yhat: &DepthImage) -> Result<f64> {
    same_shape(y, yhat)?;
    let (h, w) = y.0.shape();
    // Differences of the residual equal differences of the gradients.
    let r = &y.0 - &yhat.0;
    let mut sum = 0.0;
    for i in 0..h {
        for j in 0..w {
            if j + 1 < w {
                sum += (r[(i, j + 1)] - r[(i, j)]).abs();
            }
            if i + 1 < h {
                sum += (r[(i + 1, j)] - r[(i, j)]).abs();
            }
        }
    }
    Ok(sum / y.pixels())
}

/// Mean SSIM over every fully contained `window x window` patch, with uniform
/// weights and population (biased) moments.
pub fn ssim(y: &DepthImage, yhat: &DepthImage, params: SsimParams) -> Result<f64> {
    same_shape(y, yhat)?;
    let (h, w) = y.0.shape();
    let win = params.window;
    if win < 3 || win % 2 == 0 || win > h.min(w) {
        return Err(Error::param(format!(
            "SSIM window {win} must be odd, >= 3 and <= {}",
            h.min(w)
        )));
    }
    if !(params.c1 > 0.0 && params.c2 > 0.0) {
        return Err(Error::param("SSIM constants must be positive"));
    }
    let a = &y.0;
    let b = &yhat.0;
    let sa = SummedArea::new(h, w, |i, j| a[(i, j)]);
    let sb = SummedArea::new(h, w, |i, j| b[(i, j)]);
    let saa = SummedArea::new(h, w, |i, j| a[(i, j)] * a[(i, j)]);
    let sbb = SummedArea::new(h, w, |i, j| b[(i, j)] * b[(i, j)]);
    let sab = SummedArea::new(h, w, |i, j| a[(i, j)] * b[(i, j)]);
    let area = (win * win) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..=h - win {
        for j in 0..=w - win {
            let mu_a = sa.window(i, j, win) / area;
            let mu_b = sb.window(i, j, win) / area;
            let var_a = saa.window(i, j, win) / area - mu_a * mu_a;
            let var_b = sbb.window(i, j, win) / area - mu_b * mu_b;
            let cov = sab.window(i, j, win) / area - mu_a * mu_b;
            total += ssim_index(mu_a, mu_b, var_a, var_b, cov, params.c1, params.c2);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

pub(crate) fn ssim_index(
    mu_a: f64,
    mu_b: f64,
    var_a: f64,
    var_b: f64,
    cov: f64,
    c1: f64,
    c2: f64,
) -> f64 {
    ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
        / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
}

/// Inclusive prefix sums with a zero border.
struct SummedArea {
    w: usize,
    table: Vec<f64>,
}

impl SummedArea {
    fn new(h: usize, w: usize, value: impl Fn(usize, usize) -> f64) -> Self {
        let mut table = vec![0.0; (h + 1) * (w + 1)];
        for i in 0..h {
            for j in 0..w {
                table[(i + 1) * (w + 1) + j + 1] =
                    value(i, j) + table[i * (w + 1) + j + 1] + table[(i + 1) * (w + 1) + j]
                        - table[i * (w + 1) + j];
            }
        }
        Self { w, table }
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.table[i * (self.w + 1) + j]
    }

    fn window(&self, i: usize, j: usize, win: usize) -> f64 {
        self.at(i + win, j + win) - self.at(i, j + win) - self.at(i + win, j) + self.at(i, j)
    }
}

/// The four loss values for one image pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthLossReport {
    pub l1: f64,
    pub grad: f64,
    pub ssim: f64,
    pub combined: f64,
}

pub fn combined_depth_loss(
    y: &DepthImage,
    yhat: &DepthImage,
    lambda_w: f64,
    params: SsimParams,
) -> Result<f64> {
    Ok(depth_loss_report(y, yhat, lambda_w, params)?.combined)
}

pub fn depth_loss_report(
    y: &DepthImage,
    yhat: &DepthImage,
    lambda_w: f64,
    params: SsimParams,
) -> Result<DepthLossReport> {
    if !(lambda_w >= 0.0 && lambda_w.is_finite()) {
        return Err(Error::param(format!(
            "lambda must be finite and >= 0, got {lambda_w}"
        )));
    }
    let l1 = l1_depth(y, yhat)?;
    let grad = grad_loss(y, yhat)?;
    let s = ssim(y, yhat, params)?;
    Ok(DepthLossReport {
        l1,
        grad,
        ssim: s,
        combined: lambda_w * l1 + grad + (1.0 - s) / 2.0,
    })
}

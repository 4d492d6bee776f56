use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, MatrixStack};

/// One view of a dataset: flat feature vectors or per-sample feature maps.
#[derive(Debug, Clone, PartialEq)]
pub enum ViewData {
    Vectors(Matrix),
    Maps(MatrixStack),
}

impl ViewData {
    pub fn len(&self) -> usize {
        match self {
            ViewData::Vectors(m) => m.nrows(),
            ViewData::Maps(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_maps(&self) -> bool {
        matches!(self, ViewData::Maps(_))
    }

    pub fn select(&self, idx: &[usize]) -> ViewData {
        match self {
            ViewData::Vectors(m) => ViewData::Vectors(m.select_rows(idx)),
            ViewData::Maps(s) => ViewData::Maps(s.select(idx)),
        }
    }

    fn map_values(&self, mut f: impl FnMut(f64) -> f64) -> ViewData {
        match self {
            ViewData::Vectors(m) => ViewData::Vectors(m.map(&mut f)),
            ViewData::Maps(s) => ViewData::Maps(
                MatrixStack::new(s.items().iter().map(|m| m.map(&mut f)).collect())
                    .expect("same shapes"),
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViewSide {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoViewDataset {
    pub view_a: ViewData,
    pub view_b: ViewData,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl TwoViewDataset {
    pub fn new(
        view_a: ViewData,
        view_b: ViewData,
        labels: Vec<usize>,
        n_classes: usize,
    ) -> Result<Self> {
        let n = labels.len();
        if view_a.len() != n || view_b.len() != n {
            return Err(Error::dim(format!(
                "views hold {} and {} samples for {n} labels",
                view_a.len(),
                view_b.len()
            )));
        }
        if n_classes == 0 {
            return Err(Error::param("n_classes must be positive"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::param(format!("label {bad} outside 0..{n_classes}")));
        }
        if view_a.is_maps() != view_b.is_maps() {
            return Err(Error::param(
                "both views must be vectors or both feature maps",
            ));
        }
        Ok(Self {
            view_a,
            view_b,
            labels,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn is_maps(&self) -> bool {
        self.view_a.is_maps()
    }

    pub fn view(&self, side: ViewSide) -> &ViewData {
        match side {
            ViewSide::A => &self.view_a,
            ViewSide::B => &self.view_b,
        }
    }

    pub fn select(&self, idx: &[usize]) -> TwoViewDataset {
        TwoViewDataset {
            view_a: self.view_a.select(idx),
            view_b: self.view_b.select(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
        }
    }
}

/// Parameters of the planted two-view generator.
///
/// A class-conditional latent `z = μ_class + g` is shared by both views;
/// each view is a fixed random linear image of `z` plus its own isotropic
/// Gaussian noise, then (optionally) standardized per feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n: usize,
    pub latent_dim: usize,
    pub n_classes: usize,
    pub noise_a: f64,
    pub noise_b: f64,
    #[serde(default = "default_dim")]
    pub dim_a: usize,
    #[serde(default = "default_dim")]
    pub dim_b: usize,
    /// Standard deviation of the class means in latent space.
    #[serde(default = "default_sep")]
    pub class_sep: f64,
    #[serde(default = "default_true")]
    pub standardize: bool,
    pub seed: u64,
}

fn default_dim() -> usize {
    8
}

fn default_sep() -> f64 {
    2.0
}

fn default_true() -> bool {
    true
}

impl SyntheticSpec {
    pub fn new(
        n: usize,
        latent_dim: usize,
        n_classes: usize,
        noise_a: f64,
        noise_b: f64,
        seed: u64,
    ) -> Self {
        Self {
            n,
            latent_dim,
            n_classes,
            noise_a,
            noise_b,
            dim_a: default_dim(),
            dim_b: default_dim(),
            class_sep: default_sep(),
            standardize: true,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.n < self.n_classes {
            return Err(Error::param(format!(
                "need n >= n_classes >= 1, got n = {}, n_classes = {}",
                self.n, self.n_classes
            )));
        }
        if self.latent_dim == 0 || self.dim_a == 0 || self.dim_b == 0 {
            return Err(Error::param("latent and view dimensions must be positive"));
        }
        for (name, v) in [
            ("noise_a", self.noise_a),
            ("noise_b", self.noise_b),
            ("class_sep", self.class_sep),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Balanced labels in a seeded random order.
fn labels(n: usize, n_classes: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut l: Vec<usize> = (0..n).map(|i| i % n_classes).collect();
    l.shuffle(rng);
    l
}

pub fn make_synthetic_twoview(spec: &SyntheticSpec) -> Result<TwoViewDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let scale = 1.0 / (spec.latent_dim as f64).sqrt();
    let proj_a = gaussian(spec.latent_dim, spec.dim_a, &mut rng) * scale;
    let proj_b = gaussian(spec.latent_dim, spec.dim_b, &mut rng) * scale;
    let means = gaussian(spec.n_classes, spec.latent_dim, &mut rng) * spec.class_sep;
    let labels = labels(spec.n, spec.n_classes, &mut rng);
    let z = Matrix::from_fn(spec.n, spec.latent_dim, |i, j| means[(labels[i], j)])
        + gaussian(spec.n, spec.latent_dim, &mut rng);
    let mut a = &z * proj_a + gaussian(spec.n, spec.dim_a, &mut rng) * spec.noise_a;
    let mut b = &z * proj_b + gaussian(spec.n, spec.dim_b, &mut rng) * spec.noise_b;
    if spec.standardize {
        standardize_columns(&mut a);
        standardize_columns(&mut b);
    }
    TwoViewDataset::new(
        ViewData::Vectors(a),
        ViewData::Vectors(b),
        labels,
        spec.n_classes,
    )
}

/// Zero mean, unit sample variance per column; constant columns are only centered.
pub fn standardize_columns(m: &mut Matrix) {
    let n = m.nrows() as f64;
    for mut col in m.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
        let var = col.norm_squared() / (n - 1.0).max(1.0);
        if var > 0.0 {
            col /= var.sqrt();
        }
    }
}

/// Planted generator for matrix-valued views: `X_t = A S_t Bᵀ + noise`,
/// `Y_t = C S_t Eᵀ + noise` with a class-conditional `d1 x d2` latent `S_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticMapsSpec {
    pub n: usize,
    pub n_classes: usize,
    pub latent_rows: usize,
    pub latent_cols: usize,
    pub shape_a: (usize, usize),
    pub shape_b: (usize, usize),
    pub noise_a: f64,
    pub noise_b: f64,
    #[serde(default = "default_sep")]
    pub class_sep: f64,
    pub seed: u64,
}

pub fn make_synthetic_twoview_maps(spec: &SyntheticMapsSpec) -> Result<TwoViewDataset> {
    if spec.n_classes == 0 || spec.n < spec.n_classes {
        return Err(Error::param("need n >= n_classes >= 1"));
    }
    let (d1, d2) = (spec.latent_rows, spec.latent_cols);
    if d1 == 0 || d2 == 0 || spec.shape_a.0 * spec.shape_a.1 * spec.shape_b.0 * spec.shape_b.1 == 0
    {
        return Err(Error::param("latent and map shapes must be positive"));
    }
    for (name, v) in [
        ("noise_a", spec.noise_a),
        ("noise_b", spec.noise_b),
        ("class_sep", spec.class_sep),
    ] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::param(format!(
                "{name} must be finite and >= 0, got {v}"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let left_a = gaussian(spec.shape_a.0, d1, &mut rng) / (d1 as f64).sqrt();
    let right_a = gaussian(spec.shape_a.1, d2, &mut rng) / (d2 as f64).sqrt();
    let left_b = gaussian(spec.shape_b.0, d1, &mut rng) / (d1 as f64).sqrt();
    let right_b = gaussian(spec.shape_b.1, d2, &mut rng) / (d2 as f64).sqrt();
    let means: Vec<Matrix> = (0..spec.n_classes)
        .map(|_| gaussian(d1, d2, &mut rng) * spec.class_sep)
        .collect();
    let labels = labels(spec.n, spec.n_classes, &mut rng);
    let mut xs = Vec::with_capacity(spec.n);
    let mut ys = Vec::with_capacity(spec.n);
    for &c in &labels {
        let s = &means[c] + gaussian(d1, d2, &mut rng);
        let noise_x = gaussian(spec.shape_a.0, spec.shape_a.1, &mut rng) * spec.noise_a;
        let noise_y = gaussian(spec.shape_b.0, spec.shape_b.1, &mut rng) * spec.noise_b;
        xs.push(&left_a * &s * right_a.transpose() + noise_x);
        ys.push(&left_b * &s * right_b.transpose() + noise_y);
    }
    TwoViewDataset::new(
        ViewData::Maps(MatrixStack::new(xs)?),
        ViewData::Maps(MatrixStack::new(ys)?),
        labels,
        spec.n_classes,
    )
}

/// Adds seeded Gaussian noise with standard deviation `noise_sigma` to one view.
pub fn corrupt_view(
    dataset: &TwoViewDataset,
    side: ViewSide,
    noise_sigma: f64,
    seed: u64,
) -> Result<TwoViewDataset> {
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::param(format!(
            "noise sigma must be finite and >= 0, got {noise_sigma}"
        )));
    }
    let mut out = dataset.clone();
    if noise_sigma == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noisy = dataset
        .view(side)
        .map_values(|v| v + noise_sigma * rng.sample::<f64, _>(StandardNormal));
    match side {
        ViewSide::A => out.view_a = noisy,
        ViewSide::B => out.view_b = noisy,
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cca::fit_cca;

    fn vectors(v: &ViewData) -> &Matrix {
        match v {
            ViewData::Vectors(m) => m,
            ViewData::Maps(_) => panic!("expected vectors"),
        }
    }

    #[test]
    fn noiseless_views_are_fully_correlated() {
        let mut spec = SyntheticSpec::new(300, 3, 3, 0.0, 0.0, 1);
        spec.dim_a = 3;
        spec.dim_b = 3;
        let d = make_synthetic_twoview(&spec).unwrap();
        let m = fit_cca(vectors(&d.view_a), vectors(&d.view_b), 3, 0.0).unwrap();
        for c in m.correlations {
            assert!((c - 1.0).abs() < 1e-6, "{c}");
        }
    }

    #[test]
    fn same_seed_same_data() {
        let spec = SyntheticSpec::new(100, 2, 4, 0.5, 0.3, 9);
        assert_eq!(
            make_synthetic_twoview(&spec).unwrap(),
            make_synthetic_twoview(&spec).unwrap()
        );
        let maps = SyntheticMapsSpec {
            n: 20,
            n_classes: 2,
            latent_rows: 2,
            latent_cols: 2,
            shape_a: (5, 4),
            shape_b: (4, 4),
            noise_a: 0.1,
            noise_b: 0.1,
            class_sep: 1.0,
            seed: 3,
        };
        assert_eq!(
            make_synthetic_twoview_maps(&maps).unwrap(),
            make_synthetic_twoview_maps(&maps).unwrap()
        );
    }

    #[test]
    fn heavy_noise_breaks_correlation() {
        // one class: the latent is exactly unit variance
        let spec = SyntheticSpec::new(2000, 2, 1, 0.0, 10.0, 4);
        let d = make_synthetic_twoview(&spec).unwrap();
        let m = fit_cca(vectors(&d.view_a), vectors(&d.view_b), 1, 1e-4).unwrap();
        assert!(m.correlations[0] < 0.5, "{}", m.correlations[0]);
    }

    #[test]
    fn corruption_rules() {
        let d = make_synthetic_twoview(&SyntheticSpec::new(5000, 2, 2, 0.3, 0.3, 5)).unwrap();
        assert_eq!(corrupt_view(&d, ViewSide::B, 0.0, 1).unwrap(), d);
        let c1 = corrupt_view(&d, ViewSide::B, 1.0, 7).unwrap();
        assert_eq!(c1, corrupt_view(&d, ViewSide::B, 1.0, 7).unwrap());
        assert_eq!(c1.view_a, d.view_a);
        // standardized columns: variance goes from 1 to about 2
        let b = vectors(&c1.view_b);
        for col in b.column_iter() {
            let mean = col.sum() / 5000.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4999.0;
            assert!((var / 2.0 - 1.0).abs() < 0.05, "{var}");
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(make_synthetic_twoview(&SyntheticSpec::new(2, 2, 3, 0.1, 0.1, 0)).is_err());
        assert!(make_synthetic_twoview(&SyntheticSpec::new(20, 2, 3, -0.1, 0.1, 0)).is_err());
        let d = make_synthetic_twoview(&SyntheticSpec::new(20, 2, 3, 0.1, 0.1, 0)).unwrap();
        assert!(corrupt_view(&d, ViewSide::A, -1.0, 0).is_err());
        assert!(TwoViewDataset::new(d.view_a.clone(), d.view_b.clone(), vec![9; 20], 3).is_err());
    }
}

//! The two-stream network and its hand-written backward pass.
//!
//! ```text
//! view A -> extractor A -> projection A --\
//!                                          concat -> classifier -> softmax CE
//! view B -> extractor B -> projection B --/
//! ```
//!
//! Vector views use ReLU MLP extractors and an affine projection to `k`
//! dims (the per-stream FC layer). Map views use a per-channel affine ReLU
//! extractor, average the channels into one map, and project it with a
//! bilinear 2D-CCA layer `Lᵀ M R + B` to `d1 x d2`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{TwoViewDataset, ViewData, ViewSide};
use super::{FusionMode, NetConfig, TrainSchedule};
use crate::cca::fit_cca;
use crate::corr_loss::corr_loss;
use crate::error::{Error, Result};
use crate::tensor::{serde_matrix, serde_vector, Matrix, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `inputs x outputs`
    #[serde(with = "serde_matrix")]
    pub w: Matrix,
    #[serde(with = "serde_vector")]
    pub b: Vector,
}

impl Dense {
    fn init(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        Self {
            w: Matrix::from_fn(inputs, outputs, |_, _| rng.random_range(-limit..limit)),
            b: Vector::zeros(outputs),
        }
    }

    fn forward(&self, x: &Matrix) -> Matrix {
        let mut z = x * &self.w;
        for (j, mut col) in z.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.b[j]);
        }
        z
    }

    /// Accumulates parameter gradients and returns the input gradient.
    fn backward(&self, x: &Matrix, dz: &Matrix, grad: &mut Dense) -> Matrix {
        grad.w += x.tr_mul(dz);
        for (j, col) in dz.column_iter().enumerate() {
            grad.b[j] += col.sum();
        }
        dz * self.w.transpose()
    }
}

fn relu(m: &Matrix) -> Matrix {
    m.map(|v| v.max(0.0))
}

/// Zeroes the gradient where the pre-activation was not positive.
fn relu_backward(pre: &Matrix, d: &Matrix) -> Matrix {
    d.zip_map(pre, |g, z| if z > 0.0 { g } else { 0.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Extractor {
    Mlp {
        layers: Vec<Dense>,
    },
    /// Channel `c` computes `relu(scale[c] * X + shift[c])`.
    Maps {
        scale: Vec<f64>,
        shift: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Projection {
    Dense(Dense),
    Bilinear {
        #[serde(with = "serde_matrix")]
        l: Matrix,
        #[serde(with = "serde_matrix")]
        r: Matrix,
        #[serde(with = "serde_matrix")]
        bias: Matrix,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub extractor: Extractor,
    pub projection: Projection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNet {
    pub a: Branch,
    pub b: Branch,
    /// Hidden layers use ReLU; the last layer emits logits.
    pub classifier: Vec<Dense>,
}

/// Extractor output for one view: flat features or channel-mean maps.
#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    Vectors(Matrix),
    Maps(Vec<Matrix>),
}

enum ExtractorCache {
    Mlp {
        inputs: Vec<Matrix>,
        pre: Vec<Matrix>,
    },
    Maps {
        x: Vec<Matrix>,
        pre: Vec<Vec<Matrix>>,
    },
}

enum ProjectionCache {
    Dense {
        features: Matrix,
    },
    /// Per-batch CCA; the transform is treated as a constant when backpropagating.
    CcaLayer {
        u: Matrix,
    },
    Bilinear {
        means: Vec<Matrix>,
    },
}

struct BranchCache {
    extractor: ExtractorCache,
    projection: ProjectionCache,
}

pub struct ForwardCache {
    a: BranchCache,
    b: BranchCache,
    /// Projection outputs, one row per sample.
    pub proj_a: Matrix,
    pub proj_b: Matrix,
    cls_inputs: Vec<Matrix>,
    cls_pre: Vec<Matrix>,
    pub logits: Matrix,
}

/// Loss terms for one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub cce: f64,
    /// Sum of canonical correlations of the projections, when the mode computes it.
    pub corr: Option<f64>,
    pub total: f64,
}

fn branch_init(
    view: &ViewData,
    hidden: &[usize],
    channels: usize,
    schedule: &TrainSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<(Branch, usize)> {
    match view {
        ViewData::Vectors(m) => {
            let mut width = m.ncols();
            let mut layers = Vec::new();
            for &h in hidden {
                layers.push(Dense::init(width, h, rng));
                width = h;
            }
            if schedule.k > width {
                return Err(Error::param(format!(
                    "projection width k = {} exceeds feature width {width}",
                    schedule.k
                )));
            }
            let proj = Dense::init(width, schedule.k, rng);
            Ok((
                Branch {
                    extractor: Extractor::Mlp { layers },
                    projection: Projection::Dense(proj),
                },
                schedule.k,
            ))
        }
        ViewData::Maps(s) => {
            let (rows, cols) = s.shape();
            if schedule.d1 == 0 || schedule.d1 > rows || schedule.d2 == 0 || schedule.d2 > cols {
                return Err(Error::param(format!(
                    "2D projection {}x{} does not fit {rows}x{cols} maps",
                    schedule.d1, schedule.d2
                )));
            }
            if channels == 0 {
                return Err(Error::param("map extractor needs at least one channel"));
            }
            let scale = (0..channels).map(|_| rng.random_range(0.5..1.5)).collect();
            let shift = (0..channels).map(|_| rng.random_range(-0.5..0.5)).collect();
            let (lim_l, lim_r) = ((3.0 / rows as f64).sqrt(), (3.0 / cols as f64).sqrt());
            let l = Matrix::from_fn(rows, schedule.d1, |_, _| rng.random_range(-lim_l..lim_l));
            let r = Matrix::from_fn(cols, schedule.d2, |_, _| rng.random_range(-lim_r..lim_r));
            Ok((
                Branch {
                    extractor: Extractor::Maps { scale, shift },
                    projection: Projection::Bilinear {
                        l,
                        r,
                        bias: Matrix::zeros(schedule.d1, schedule.d2),
                    },
                },
                schedule.d1 * schedule.d2,
            ))
        }
    }
}

impl FeatureNet {
    /// Seeded initialization; depends on the data shapes and `k`/`d1`/`d2`
    /// but not on the fusion mode.
    pub fn new(
        config: &NetConfig,
        dataset: &TwoViewDataset,
        schedule: &TrainSchedule,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
        let (a, wa) = branch_init(
            &dataset.view_a,
            &config.hidden_a,
            config.channels,
            schedule,
            &mut rng,
        )?;
        let (b, wb) = branch_init(
            &dataset.view_b,
            &config.hidden_b,
            config.channels,
            schedule,
            &mut rng,
        )?;
        let mut classifier = Vec::new();
        let mut width = wa + wb;
        for &h in &config.classifier_hidden {
            classifier.push(Dense::init(width, h, &mut rng));
            width = h;
        }
        classifier.push(Dense::init(width, dataset.n_classes, &mut rng));
        Ok(Self { a, b, classifier })
    }

    pub fn branch(&self, side: ViewSide) -> &Branch {
        match side {
            ViewSide::A => &self.a,
            ViewSide::B => &self.b,
        }
    }

    pub fn branch_mut(&mut self, side: ViewSide) -> &mut Branch {
        match side {
            ViewSide::A => &mut self.a,
            ViewSide::B => &mut self.b,
        }
    }

    /// A same-shaped network with every parameter zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_param_mut(|p| *p = 0.0);
        z
    }

    /// Visits every parameter in a fixed order.
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for branch in [&mut self.a, &mut self.b] {
            match &mut branch.extractor {
                Extractor::Mlp { layers } => {
                    layers.iter_mut().for_each(|l| dense_params(l, &mut f))
                }
                Extractor::Maps { scale, shift } => {
                    scale.iter_mut().chain(shift.iter_mut()).for_each(&mut f)
                }
            }
            match &mut branch.projection {
                Projection::Dense(d) => dense_params(d, &mut f),
                Projection::Bilinear { l, r, bias } => l
                    .iter_mut()
                    .chain(r.iter_mut())
                    .chain(bias.iter_mut())
                    .for_each(&mut f),
            }
        }
        self.classifier
            .iter_mut()
            .for_each(|l| dense_params(l, &mut f));
    }

    pub fn param_values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.clone().for_each_param_mut(|p| out.push(*p));
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_values().len()
    }

    /// `self -= step * grad`
    pub fn apply_gradient(&mut self, grad: &FeatureNet, step: f64) {
        let g = grad.param_values();
        let mut i = 0;
        self.for_each_param_mut(|p| {
            *p -= step * g[i];
            i += 1;
        });
    }

    pub fn is_finite(&self) -> bool {
        self.param_values().iter().all(|v| v.is_finite())
    }

    /// Extractor output (the projection layer's input) for a whole view.
    pub fn features(&self, side: ViewSide, view: &ViewData) -> Result<Features> {
        Ok(extract(&self.branch(side).extractor, view)?.0)
    }

    pub fn forward(
        &self,
        mode: FusionMode,
        batch: &TwoViewDataset,
        reg_epsilon: f64,
    ) -> Result<ForwardCache> {
        let (fa, ea) = extract(&self.a.extractor, &batch.view_a)?;
        let (fb, eb) = extract(&self.b.extractor, &batch.view_b)?;
        let (proj_a, proj_b, pa_cache, pb_cache) = if mode == FusionMode::CcaLayer {
            let (Features::Vectors(fa), Features::Vectors(fb)) = (fa, fb) else {
                return Err(Error::param("the CCA layer needs vector views"));
            };
            let k = match &self.a.projection {
                Projection::Dense(d) => d.w.ncols(),
                Projection::Bilinear { .. } => {
                    return Err(Error::param("the CCA layer needs vector views"))
                }
            };
            if fa.nrows() <= k + 1 {
                return Err(Error::degenerate(format!(
                    "CCA layer batch of {} samples is singular for k = {k}; need more than k + 1",
                    fa.nrows()
                )));
            }
            let model = fit_cca(&fa, &fb, k, reg_epsilon)?;
            let (pa, pb) = model.project(&fa, &fb)?;
            (
                pa,
                pb,
                ProjectionCache::CcaLayer { u: model.u },
                ProjectionCache::CcaLayer { u: model.v },
            )
        } else {
            let (pa, ca) = project(&self.a.projection, fa)?;
            let (pb, cb) = project(&self.b.projection, fb)?;
            (pa, pb, ca, cb)
        };

        let mut h = concat_columns(&proj_a, &proj_b);
        let mut cls_inputs = Vec::with_capacity(self.classifier.len());
        let mut cls_pre = Vec::with_capacity(self.classifier.len());
        let last = self.classifier.len() - 1;
        for (i, layer) in self.classifier.iter().enumerate() {
            let z = layer.forward(&h);
            cls_inputs.push(h);
            h = if i < last { relu(&z) } else { z.clone() };
            cls_pre.push(z);
        }
        Ok(ForwardCache {
            a: BranchCache {
                extractor: ea,
                projection: pa_cache,
            },
            b: BranchCache {
                extractor: eb,
                projection: pb_cache,
            },
            proj_a,
            proj_b,
            cls_inputs,
            cls_pre,
            logits: h,
        })
    }

    /// Batch loss for the schedule's mode (no gradients).
    pub fn loss(&self, schedule: &TrainSchedule, batch: &TwoViewDataset) -> Result<LossParts> {
        let cache = self.forward(schedule.mode, batch, schedule.reg_epsilon)?;
        let (cce, _) = softmax_cross_entropy(&cache.logits, &batch.labels);
        if schedule.mode == FusionMode::Ccar {
            let (corr_l, _) = corr_loss(&cache.proj_a, &cache.proj_b, schedule.reg_epsilon)?;
            Ok(LossParts {
                cce,
                corr: Some(-corr_l),
                total: cce + schedule.lambda * corr_l,
            })
        } else {
            Ok(LossParts {
                cce,
                corr: None,
                total: cce,
            })
        }
    }

    /// Batch loss and its gradient with respect to every parameter.
    pub fn loss_and_grad(
        &self,
        schedule: &TrainSchedule,
        batch: &TwoViewDataset,
    ) -> Result<(LossParts, FeatureNet)> {
        let cache = self.forward(schedule.mode, batch, schedule.reg_epsilon)?;
        let (cce, dlogits) = softmax_cross_entropy(&cache.logits, &batch.labels);
        let mut grad = self.zeros_like();

        let mut d = dlogits;
        for i in (0..self.classifier.len()).rev() {
            if i + 1 < self.classifier.len() {
                d = relu_backward(&cache.cls_pre[i], &d);
            }
            d = self.classifier[i].backward(&cache.cls_inputs[i], &d, &mut grad.classifier[i]);
        }
        let ka = cache.proj_a.ncols();
        let mut dpa = d.columns(0, ka).into_owned();
        let mut dpb = d.columns(ka, d.ncols() - ka).into_owned();

        let parts = if schedule.mode == FusionMode::Ccar {
            let (corr_l, ws) = corr_loss(&cache.proj_a, &cache.proj_b, schedule.reg_epsilon)?;
            let (gx, gy) = ws.gradients();
            dpa += gx * schedule.lambda;
            dpb += gy * schedule.lambda;
            LossParts {
                cce,
                corr: Some(-corr_l),
                total: cce + schedule.lambda * corr_l,
            }
        } else {
            LossParts {
                cce,
                corr: None,
                total: cce,
            }
        };

        branch_backward(&self.a, &cache.a, &dpa, &mut grad.a);
        branch_backward(&self.b, &cache.b, &dpb, &mut grad.b);
        Ok((parts, grad))
    }

    /// Predicted class per sample; ties go to the lowest class index.
    pub fn predict(
        &self,
        mode: FusionMode,
        data: &TwoViewDataset,
        reg_epsilon: f64,
    ) -> Result<Vec<usize>> {
        let cache = self.forward(mode, data, reg_epsilon)?;
        Ok(argmax_rows(&cache.logits))
    }
}

fn dense_params(d: &mut Dense, f: &mut impl FnMut(&mut f64)) {
    d.w.iter_mut().chain(d.b.iter_mut()).for_each(f);
}

pub(crate) fn argmax_rows(m: &Matrix) -> Vec<usize> {
    m.row_iter()
        .map(|row| {
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn concat_columns(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// Mean cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> (f64, Matrix) {
    let n = logits.nrows() as f64;
    let mut grad = Matrix::zeros(logits.nrows(), logits.ncols());
    let mut loss = 0.0;
    for (i, row) in logits.row_iter().enumerate() {
        let max = row.max();
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_sum = sum.ln() + max;
        loss += log_sum - row[labels[i]];
        for j in 0..row.len() {
            grad[(i, j)] = (row[j] - log_sum).exp() / n;
        }
        grad[(i, labels[i])] -= 1.0 / n;
    }
    (loss / n, grad)
}

fn extract(extractor: &Extractor, view: &ViewData) -> Result<(Features, ExtractorCache)> {
    match (extractor, view) {
        (Extractor::Mlp { layers }, ViewData::Vectors(x)) => {
            let expected = layers.first().map(|l| l.w.nrows());
            if let Some(w) = expected {
                if w != x.ncols() {
                    return Err(Error::dim(format!(
                        "view has {} features, network expects {w}",
                        x.ncols()
                    )));
                }
            }
            let mut h = x.clone();
            let mut inputs = Vec::with_capacity(layers.len());
            let mut pre = Vec::with_capacity(layers.len());
            for layer in layers {
                let z = layer.forward(&h);
                inputs.push(h);
                h = relu(&z);
                pre.push(z);
            }
            Ok((Features::Vectors(h), ExtractorCache::Mlp { inputs, pre }))
        }
        (Extractor::Maps { scale, shift }, ViewData::Maps(stack)) => {
            let c = scale.len() as f64;
            let mut means = Vec::with_capacity(stack.len());
            let mut pre = Vec::with_capacity(stack.len());
            for x in stack.items() {
                let zs: Vec<Matrix> = scale
                    .iter()
                    .zip(shift)
                    .map(|(&a, &b)| x.map(|v| a * v + b))
                    .collect();
                let mut mean = Matrix::zeros(x.nrows(), x.ncols());
                for z in &zs {
                    mean += relu(z);
                }
                means.push(mean / c);
                pre.push(zs);
            }
            Ok((
                Features::Maps(means),
                ExtractorCache::Maps {
                    x: stack.items().to_vec(),
                    pre,
                },
            ))
        }
        _ => Err(Error::param("view kind does not match the network branch")),
    }
}

fn project(projection: &Projection, features: Features) -> Result<(Matrix, ProjectionCache)> {
    match (projection, features) {
        (Projection::Dense(d), Features::Vectors(f)) => {
            if f.ncols() != d.w.nrows() {
                return Err(Error::dim(format!(
                    "features have {} columns, projection expects {}",
                    f.ncols(),
                    d.w.nrows()
                )));
            }
            Ok((d.forward(&f), ProjectionCache::Dense { features: f }))
        }
        (Projection::Bilinear { l, r, bias }, Features::Maps(means)) => {
            let (d1, d2) = bias.shape();
            let mut out = Matrix::zeros(means.len(), d1 * d2);
            for (t, m) in means.iter().enumerate() {
                if m.shape() != (l.nrows(), r.nrows()) {
                    return Err(Error::dim(format!(
                        "map is {:?}, projection expects {:?}",
                        m.shape(),
                        (l.nrows(), r.nrows())
                    )));
                }
                let p = l.transpose() * m * r + bias;
                for i in 0..d1 {
                    for j in 0..d2 {
                        out[(t, i * d2 + j)] = p[(i, j)];
                    }
                }
            }
            Ok((out, ProjectionCache::Bilinear { means }))
        }
        _ => Err(Error::param(
            "feature kind does not match the projection layer",
        )),
    }
}

fn branch_backward(branch: &Branch, cache: &BranchCache, dproj: &Matrix, grad: &mut Branch) {
    let dfeat = match (&branch.projection, &cache.projection, &mut grad.projection) {
        (Projection::Dense(d), ProjectionCache::Dense { features }, Projection::Dense(g)) => {
            Features::Vectors(d.backward(features, dproj, g))
        }
        (_, ProjectionCache::CcaLayer { u }, _) => Features::Vectors(dproj * u.transpose()),
        (
            Projection::Bilinear { l, r, bias },
            ProjectionCache::Bilinear { means },
            Projection::Bilinear {
                l: gl,
                r: gr,
                bias: gb,
            },
        ) => {
            let (d1, d2) = bias.shape();
            let mut dmeans = Vec::with_capacity(means.len());
            for (t, m) in means.iter().enumerate() {
                let dp = Matrix::from_fn(d1, d2, |i, j| dproj[(t, i * d2 + j)]);
                *gl += m * r * dp.transpose();
                *gr += m.transpose() * l * &dp;
                *gb += &dp;
                dmeans.push(l * dp * r.transpose());
            }
            Features::Maps(dmeans)
        }
        _ => unreachable!("gradient network mirrors the forward network"),
    };

    match (
        &branch.extractor,
        &cache.extractor,
        &mut grad.extractor,
        dfeat,
    ) {
        (
            Extractor::Mlp { layers },
            ExtractorCache::Mlp { inputs, pre },
            Extractor::Mlp { layers: gl },
            Features::Vectors(mut d),
        ) => {
            for i in (0..layers.len()).rev() {
                d = relu_backward(&pre[i], &d);
                d = layers[i].backward(&inputs[i], &d, &mut gl[i]);
            }
        }
        (
            Extractor::Maps { scale, .. },
            ExtractorCache::Maps { x, pre },
            Extractor::Maps {
                scale: gs,
                shift: gsh,
            },
            Features::Maps(dmeans),
        ) => {
            let c = scale.len() as f64;
            for (t, dm) in dmeans.iter().enumerate() {
                for ch in 0..scale.len() {
                    let dz = relu_backward(&pre[t][ch], &(dm / c));
                    gs[ch] += dz.dot(&x[t]);
                    gsh[ch] += dz.sum();
                }
            }
        }
        _ => unreachable!("gradient network mirrors the forward network"),
    }
}

/// Projection-layer weights that reproduce `(f - mean) * u` exactly in weights.
pub(crate) fn dense_from_transform(u: &Matrix, mean: &Vector) -> Dense {
    Dense {
        w: u.clone(),
        b: -(u.transpose() * mean),
    }
}

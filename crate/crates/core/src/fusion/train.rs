use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{TwoViewDataset, ViewSide};
use super::net::{argmax_rows, dense_from_transform, FeatureNet, Features, Projection};
use super::{FusionMode, NetConfig, TrainSchedule};
use crate::cca::{fit_cca, CcaModel};
use crate::cca2d::{fit_2dcca, Cca2dModel, Cca2dOptions};
use crate::error::{Error, Result};
use crate::tensor::{Matrix, MatrixStack};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean total batch loss over the epoch.
    pub train_loss: f64,
    /// Sum of canonical correlations between the two projections over the
    /// training set at the end of the epoch (NaN if not computable).
    pub train_corr: f64,
    pub val_accuracy: f64,
    pub cca_replaced: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReplacedTransforms {
    Cca(CcaModel),
    Cca2d(Cca2dModel),
}

/// Transforms written into the projection layers at the start of `epoch`.
#[derive(Debug, Clone, PartialEq)]
pub struct Replacement {
    pub epoch: usize,
    pub transforms: ReplacedTransforms,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: FeatureNet,
    pub logs: Vec<EpochLog>,
    pub replacements: Vec<Replacement>,
}

/// Trains a fresh network; `val` defaults to the training set for the logged accuracy.
pub fn train(
    dataset: &TwoViewDataset,
    val: Option<&TwoViewDataset>,
    config: &NetConfig,
    schedule: &TrainSchedule,
) -> Result<TrainOutcome> {
    train_with_observer(dataset, val, config, schedule, |_, _| {})
}

/// Like [`train`], calling `observer(epoch, net)` at the start of every epoch
/// after any replacement and before the epoch's gradient steps.
pub fn train_with_observer(
    dataset: &TwoViewDataset,
    val: Option<&TwoViewDataset>,
    config: &NetConfig,
    schedule: &TrainSchedule,
    mut observer: impl FnMut(usize, &FeatureNet),
) -> Result<TrainOutcome> {
    schedule.validate()?;
    check_mode(schedule.mode, dataset)?;
    if dataset.len() < 2 {
        return Err(Error::param("training needs at least 2 samples"));
    }
    let mut net = FeatureNet::new(config, dataset, schedule)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    shuffle_rng.set_stream(1);
    let min_tail = if dataset.is_maps() {
        schedule.d1 * schedule.d2 + 2
    } else {
        schedule.k + 2
    };

    let mut logs = Vec::with_capacity(schedule.epochs);
    let mut replacements = Vec::new();
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    for epoch in 0..schedule.epochs {
        let replaced = schedule.replaces_at(epoch);
        if replaced {
            let transforms = replace_projection(&mut net, dataset, schedule)?;
            replacements.push(Replacement { epoch, transforms });
        }
        observer(epoch, &net);

        order.shuffle(&mut shuffle_rng);
        let batches = batch_ranges(order.len(), schedule.batch_size, min_tail);
        let mut loss_sum = 0.0;
        for &(start, end) in &batches {
            let batch = dataset.select(&order[start..end]);
            let (parts, grad) = net.loss_and_grad(schedule, &batch).map_err(|e| match e {
                Error::Training { .. } => e,
                other => Error::Training {
                    epoch,
                    reason: other.to_string(),
                },
            })?;
            if !parts.total.is_finite() {
                return Err(Error::Training {
                    epoch,
                    reason: format!("batch loss {}", parts.total),
                });
            }
            loss_sum += parts.total;
            net.apply_gradient(&grad, schedule.learning_rate);
        }
        if !net.is_finite() {
            return Err(Error::Training {
                epoch,
                reason: "non-finite parameters".into(),
            });
        }
        let train_loss = loss_sum / batches.len() as f64;
        let train_corr = projection_correlation(&net, schedule, dataset).unwrap_or(f64::NAN);
        let val_accuracy = evaluate(&net, schedule, val.unwrap_or(dataset))?;
        logs.push(EpochLog {
            epoch,
            train_loss,
            train_corr,
            val_accuracy,
            cca_replaced: replaced,
        });
    }
    Ok(TrainOutcome {
        net,
        logs,
        replacements,
    })
}

fn check_mode(mode: FusionMode, dataset: &TwoViewDataset) -> Result<()> {
    match (mode, dataset.is_maps()) {
        (FusionMode::Accar2d, false) => Err(Error::param("ACCAR_2D needs feature-map views")),
        (FusionMode::Ccar | FusionMode::Accar | FusionMode::CcaLayer, true) => {
            Err(Error::param(format!("{mode:?} needs vector views")))
        }
        _ => Ok(()),
    }
}

/// Contiguous `[start, end)` chunks; a trailing chunk shorter than `min_tail`
/// is merged into the one before it.
fn batch_ranges(n: usize, batch_size: usize, min_tail: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = (0..n)
        .step_by(batch_size)
        .map(|s| (s, (s + batch_size).min(n)))
        .collect();
    if out.len() >= 2 {
        let (s, e) = out[out.len() - 1];
        if e - s < min_tail {
            out.pop();
            out.last_mut().expect("at least one chunk").1 = e;
        }
    }
    out
}

fn replace_projection(
    net: &mut FeatureNet,
    dataset: &TwoViewDataset,
    schedule: &TrainSchedule,
) -> Result<ReplacedTransforms> {
    let fa = net.features(ViewSide::A, &dataset.view_a)?;
    let fb = net.features(ViewSide::B, &dataset.view_b)?;
    match (fa, fb) {
        (Features::Vectors(fa), Features::Vectors(fb)) => {
            let model = fit_cca(&fa, &fb, schedule.k, schedule.reg_epsilon)?;
            net.a.projection = Projection::Dense(dense_from_transform(&model.u, &model.mean_x));
            net.b.projection = Projection::Dense(dense_from_transform(&model.v, &model.mean_y));
            Ok(ReplacedTransforms::Cca(model))
        }
        (Features::Maps(ma), Features::Maps(mb)) => {
            let mut opts = Cca2dOptions::new(schedule.d1, schedule.d2);
            opts.reg_epsilon = schedule.reg_epsilon;
            let model = fit_2dcca(&MatrixStack::new(ma)?, &MatrixStack::new(mb)?, &opts)?;
            net.a.projection = bilinear_from(&model.lx, &model.rx, &model.mean_x);
            net.b.projection = bilinear_from(&model.ly, &model.ry, &model.mean_y);
            Ok(ReplacedTransforms::Cca2d(model))
        }
        _ => Err(Error::param("views disagree on feature kind")),
    }
}

fn bilinear_from(l: &Matrix, r: &Matrix, mean: &Matrix) -> Projection {
    Projection::Bilinear {
        l: l.clone(),
        r: r.clone(),
        bias: -(l.transpose() * mean * r),
    }
}

fn projection_correlation(
    net: &FeatureNet,
    schedule: &TrainSchedule,
    data: &TwoViewDataset,
) -> Result<f64> {
    let cache = net.forward(schedule.mode, data, schedule.reg_epsilon)?;
    let k = cache.proj_a.ncols().min(cache.proj_b.ncols());
    let model = fit_cca(&cache.proj_a, &cache.proj_b, k, schedule.reg_epsilon)?;
    Ok(model.correlations.iter().sum())
}

/// Fraction of samples whose arg-max logit (lowest index on ties) is the label.
///
/// The whole dataset is one forward batch, so the CCA layer fits on it.
pub fn evaluate(
    net: &FeatureNet,
    schedule: &TrainSchedule,
    dataset: &TwoViewDataset,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::param("cannot evaluate on an empty dataset"));
    }
    let cache = net.forward(schedule.mode, dataset, schedule.reg_epsilon)?;
    let pred = argmax_rows(&cache.logits);
    let correct = pred
        .iter()
        .zip(&dataset.labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / dataset.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tail_merging() {
        assert_eq!(batch_ranges(10, 4, 3), vec![(0, 4), (4, 10)]);
        assert_eq!(batch_ranges(11, 4, 3), vec![(0, 4), (4, 8), (8, 11)]);
        assert_eq!(batch_ranges(3, 4, 5), vec![(0, 3)]);
    }
}

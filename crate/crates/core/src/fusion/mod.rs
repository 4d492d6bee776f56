//! Two-view fusion training: a small two-stream network and the fusion
//! schedules that differ in how the per-stream projection is obtained.
//!
//! - `Baseline`: projections are ordinary trained affine layers.
//! - `Ccar`: baseline plus `λ · L_corr` on the projections of every batch.
//! - `Accar`: every `cca_freq_t` epochs among the first `cca_first_m`, CCA is
//!   fitted on the whole training set's extractor features and its transforms
//!   overwrite the projection weights; training then continues through them.
//! - `CcaLayer`: the projection is a CCA fitted on each mini-batch.
//! - `Accar2d`: `Accar` for feature-map views with a bilinear 2D-CCA layer,
//!   refitted by the alternating 2D-CCA solver.

mod data;
mod net;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use data::{
    corrupt_view, make_synthetic_twoview, make_synthetic_twoview_maps, standardize_columns,
    SyntheticMapsSpec, SyntheticSpec, TwoViewDataset, ViewData, ViewSide,
};
pub use net::{
    softmax_cross_entropy, Branch, Dense, Extractor, FeatureNet, Features, ForwardCache, LossParts,
    Projection,
};
pub use train::{
    evaluate, train, train_with_observer, EpochLog, ReplacedTransforms, Replacement, TrainOutcome,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FusionMode {
    Baseline,
    Ccar,
    Accar,
    CcaLayer,
    #[serde(rename = "ACCAR_2D")]
    Accar2d,
}

impl FusionMode {
    pub fn replaces_weights(self) -> bool {
        matches!(self, FusionMode::Accar | FusionMode::Accar2d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    pub mode: FusionMode,
    /// Weight of the correlation loss; only used by `Ccar`.
    #[serde(default = "defaults::lambda")]
    pub lambda: f64,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    /// Replacement only happens in epochs `< cca_first_m`.
    #[serde(default = "defaults::cca_first_m")]
    pub cca_first_m: usize,
    #[serde(default = "defaults::cca_freq_t")]
    pub cca_freq_t: usize,
    #[serde(default = "defaults::k")]
    pub k: usize,
    #[serde(default = "defaults::d")]
    pub d1: usize,
    #[serde(default = "defaults::d")]
    pub d2: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    pub seed: u64,
    #[serde(default = "defaults::reg_epsilon")]
    pub reg_epsilon: f64,
}

pub mod defaults {
    pub fn lambda() -> f64 {
        0.1
    }
    pub fn epochs() -> usize {
        80
    }
    pub fn cca_first_m() -> usize {
        60
    }
    pub fn cca_freq_t() -> usize {
        10
    }
    pub fn k() -> usize {
        2
    }
    pub fn d() -> usize {
        2
    }
    pub fn batch_size() -> usize {
        32
    }
    pub fn learning_rate() -> f64 {
        0.05
    }
    pub fn reg_epsilon() -> f64 {
        crate::tensor::DEFAULT_REG_EPSILON
    }
}

impl TrainSchedule {
    pub fn new(mode: FusionMode, seed: u64) -> Self {
        Self {
            mode,
            lambda: defaults::lambda(),
            epochs: defaults::epochs(),
            cca_first_m: defaults::cca_first_m(),
            cca_freq_t: defaults::cca_freq_t(),
            k: defaults::k(),
            d1: defaults::d(),
            d2: defaults::d(),
            batch_size: defaults::batch_size(),
            learning_rate: defaults::learning_rate(),
            seed,
            reg_epsilon: defaults::reg_epsilon(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::param("epochs must be at least 1"));
        }
        if self.cca_first_m > self.epochs {
            return Err(Error::param(format!(
                "cca_first_m = {} exceeds epochs = {}",
                self.cca_first_m, self.epochs
            )));
        }
        if self.cca_freq_t == 0 {
            return Err(Error::param("cca_freq_t must be at least 1"));
        }
        if self.k == 0 || self.d1 == 0 || self.d2 == 0 {
            return Err(Error::param("k, d1 and d2 must be positive"));
        }
        if self.batch_size < 2 {
            return Err(Error::param("batch_size must be at least 2"));
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("learning_rate", self.learning_rate),
            ("reg_epsilon", self.reg_epsilon),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Whether weights are replaced at the start of `epoch`.
    pub fn replaces_at(&self, epoch: usize) -> bool {
        self.mode.replaces_weights() && epoch < self.cca_first_m && epoch % self.cca_freq_t == 0
    }
}

/// Layer widths of the two-stream network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    #[serde(default = "default_hidden")]
    pub hidden_a: Vec<usize>,
    #[serde(default = "default_hidden")]
    pub hidden_b: Vec<usize>,
    #[serde(default = "default_hidden")]
    pub classifier_hidden: Vec<usize>,
    /// Channels of the feature-map extractor.
    #[serde(default = "default_channels")]
    pub channels: usize,
}

fn default_hidden() -> Vec<usize> {
    vec![16]
}

fn default_channels() -> usize {
    4
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            hidden_a: default_hidden(),
            hidden_b: default_hidden(),
            classifier_hidden: default_hidden(),
            channels: default_channels(),
        }
    }
}

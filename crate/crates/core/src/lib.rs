//! Canonical correlation analysis and CCA-based two-view fusion.
//!
//! - [`cca`]: closed-form CCA with whitening and sign-normalized transforms.
//! - [`corr_loss`]: negative total canonical correlation of a batch, with its
//!   analytic gradient.
//! - [`cca2d`]: alternating two-dimensional CCA for matrix-valued samples.
//! - [`fusion`]: a small two-stream network trained with plain cross-entropy,
//!   a correlation penalty, periodic CCA weight replacement, a per-batch CCA
//!   layer, or 2D-CCA replacement.
//! - [`metrics`], [`depth`]: detection metrics and depth-map losses.
//! - [`io`], [`experiment`], [`cli`]: tensor files, config-driven runs and the
//!   `ccafuse` command line.
//!
//! Samples are rows throughout. Covariances use the `N - 1` divisor plus an
//! optional ridge `εI`.

pub mod error;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Matrix, MatrixStack, Vector};

pub mod cca;
pub mod cca2d;
pub mod cli;
pub mod corr_loss;
pub mod depth;
pub mod experiment;
pub mod fusion;
pub mod gradcheck;
pub mod io;
pub mod metrics;

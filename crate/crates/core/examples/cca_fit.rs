//! Closed-form CCA on two noisy views of a shared 2-D signal.
//!
//! cargo run --example cca_fit

use ccafuse::cca::fit_cca;
use ccafuse::tensor::DEFAULT_REG_EPSILON;
use ccafuse::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> ccafuse::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut normal = |r, c| Matrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
    let z = normal(500, 2);
    let x = &z * normal(2, 6) + normal(500, 6) * 0.5;
    let y = &z * normal(2, 4) + normal(500, 4) * 1.5;

    let model = fit_cca(&x, &y, 3, DEFAULT_REG_EPSILON)?;
    println!("canonical correlations: {:.4?}", model.correlations);

    let (px, py) = model.project(&x, &y)?;
    // projections are centered and whitened: unit sample variance
    let var = px.column(0).norm_squared() / 499.0;
    println!("var of first X variate: {var:.4}");
    let r = px.column(0).dot(&py.column(0)) / 499.0;
    println!("cov of first pair: {r:.4}");
    println!("{}", serde_json::to_string(&model.correlations)?);
    Ok(())
}

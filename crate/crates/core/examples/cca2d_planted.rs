//! 2D-CCA recovering a planted 2x2 latent shared by two stacks of matrices.
//!
//! cargo run --example cca2d_planted

use ccafuse::cca::canonical_correlation;
use ccafuse::cca2d::{fit_2dcca, Cca2dOptions, View};
use ccafuse::{Matrix, MatrixStack};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> ccafuse::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut normal = |r, c| Matrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
    let (a, b, c, e) = (normal(8, 2), normal(6, 2), normal(7, 2), normal(5, 2));
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for _ in 0..500 {
        let s = normal(2, 2);
        xs.push(&a * &s * b.transpose() + normal(8, 6) * 0.2);
        ys.push(&c * &s * e.transpose() + normal(7, 5) * 0.2);
    }
    let (xs, ys) = (MatrixStack::new(xs)?, MatrixStack::new(ys)?);

    let model = fit_2dcca(&xs, &ys, &Cca2dOptions::new(2, 2))?;
    println!(
        "{} iterations, converged: {}, rejected half-steps: {}",
        model.iterations, model.converged, model.rejected_steps
    );
    println!("objective trace: {:.6?}", model.objective_trace);

    let px = model.project_stack(&xs, View::X)?.flatten();
    let py = model.project_stack(&ys, View::Y)?.flatten();
    for j in 0..4 {
        let u: Vec<f64> = px.column(j).iter().copied().collect();
        let v: Vec<f64> = py.column(j).iter().copied().collect();
        println!(
            "entry {j}: correlation {:.4}",
            canonical_correlation(&u, &v)?
        );
    }
    Ok(())
}

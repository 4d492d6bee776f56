//! Depth losses between a smooth depth map and three distorted copies.
//!
//! cargo run --example depth_losses

use ccafuse::depth::{depth_loss_report, DepthImage, SsimParams, DEFAULT_LAMBDA};
use ccafuse::Matrix;

fn main() -> ccafuse::Result<()> {
    let (h, w) = (24, 32);
    let truth = Matrix::from_fn(h, w, |i, j| {
        1.0 + 0.5 * (i as f64 / 6.0).sin() + 0.02 * j as f64
    });
    let y = DepthImage::new(truth.clone())?;
    let cases = [
        ("identical", truth.clone()),
        ("offset +0.2", truth.map(|v| v + 0.2)),
        (
            "blurred rows",
            Matrix::from_fn(h, w, |i, j| {
                let lo = i.saturating_sub(1);
                let hi = (i + 1).min(h - 1);
                (truth[(lo, j)] + truth[(i, j)] + truth[(hi, j)]) / 3.0
            }),
        ),
        (
            "checker noise",
            truth.map_with_location(|i, j, v| v + if (i + j) % 2 == 0 { 0.05 } else { -0.05 }),
        ),
    ];
    let params = SsimParams::for_range(7, 2.0);
    println!(
        "{:<14} {:>8} {:>8} {:>8} {:>9}",
        "case", "l1", "grad", "ssim", "combined"
    );
    for (name, m) in cases {
        let r = depth_loss_report(&y, &DepthImage::new(m)?, DEFAULT_LAMBDA, params)?;
        println!(
            "{name:<14} {:>8.4} {:>8.4} {:>8.4} {:>9.4}",
            r.l1, r.grad, r.ssim, r.combined
        );
    }
    Ok(())
}

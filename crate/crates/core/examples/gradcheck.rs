//! The correlation loss and its analytic gradient, checked against central
//! finite differences.
//!
//! cargo run --example gradcheck

use ccafuse::corr_loss::{corr_loss, corr_loss_grad};
use ccafuse::gradcheck::{check_corr_loss, correlated_batch, DEFAULT_TOLERANCE};

fn main() -> ccafuse::Result<()> {
    let eps = 1e-4;
    for (n, k) in [(8, 1), (16, 2), (64, 3)] {
        let (x, y) = correlated_batch(n, k, 42);
        let (loss, ws) = corr_loss(&x, &y, eps)?;
        let (gx, _) = corr_loss_grad(&x, &y, eps)?;
        let err = check_corr_loss(&x, &y, eps)?;
        println!(
            "N={n:<3} k={k}  loss {loss:+.6}  singular values {:.4?}  |grad x| {:.3e}  max rel err {err:.2e} ({})",
            ws.d.as_slice(),
            gx.norm(),
            if err <= DEFAULT_TOLERANCE { "ok" } else { "FAIL" }
        );
    }
    Ok(())
}

//! Independent reference implementations checked against the library.

mod common;

use ccafuse::cca::fit_cca;
use ccafuse::depth::{ssim, DepthImage, SsimParams};
use common::{naive_ssim, normal, projected_ascent, sample_cov};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn ssim_matches_naive_sliding_window() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for (h, w, win) in [(7, 7, 7), (9, 12, 7), (16, 10, 3), (20, 20, 5), (11, 8, 7)] {
        for _ in 0..5 {
            let a = normal(h, w, &mut rng).map(|v| 0.5 + 0.2 * v);
            let b = &a + normal(h, w, &mut rng) * 0.1;
            let p = SsimParams::for_range(win, 1.0);
            let got = ssim(
                &DepthImage::new(a.clone()).unwrap(),
                &DepthImage::new(b.clone()).unwrap(),
                p,
            )
            .unwrap();
            let want = naive_ssim(&a, &b, win, p.c1, p.c2);
            assert!(
                (got - want).abs() <= 1e-10,
                "{h}x{w} window {win}: {got} vs {want}"
            );
        }
    }
}

#[test]
fn cca_matches_projected_gradient_ascent() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for inst in 0..20 {
        let dx = 1 + inst % 4;
        let dy = 1 + (inst / 4) % 4;
        let x = normal(50, dx, &mut rng);
        let y = &x * normal(dx, dy, &mut rng) * 0.7 + normal(50, dy, &mut rng);
        let model = fit_cca(&x, &y, 1, 0.0).unwrap();
        let oracle = projected_ascent(
            &sample_cov(&x, &x),
            &sample_cov(&y, &y),
            &sample_cov(&x, &y),
            100,
            &mut rng,
        );
        let gap = (model.correlations[0] - oracle).abs();
        assert!(
            gap <= 1e-6,
            "instance {inst}: closed form {} vs ascent {oracle}",
            model.correlations[0]
        );
    }
}

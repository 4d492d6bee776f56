//! Every fusion mode on the same synthetic problem: vector views for
//! BASELINE, CCAR, ACCAR and CCA_LAYER, matrix views for ACCAR_2D.
//!
//! cargo run --release --example fusion_modes

use ccafuse::fusion::*;

fn main() -> ccafuse::Result<()> {
    let vectors = make_synthetic_twoview(&SyntheticSpec::new(900, 2, 3, 0.6, 0.6, 5))?;
    let maps = make_synthetic_twoview_maps(&SyntheticMapsSpec {
        n: 900,
        n_classes: 3,
        latent_rows: 2,
        latent_cols: 2,
        shape_a: (6, 5),
        shape_b: (5, 4),
        noise_a: 0.5,
        noise_b: 0.5,
        class_sep: 1.5,
        seed: 5,
    })?;
    let train_idx: Vec<usize> = (0..600).collect();
    let test_idx: Vec<usize> = (600..900).collect();
    let net = NetConfig::default();

    let runs = [
        (FusionMode::Baseline, &vectors),
        (FusionMode::Ccar, &vectors),
        (FusionMode::Accar, &vectors),
        (FusionMode::CcaLayer, &vectors),
        (FusionMode::Accar2d, &maps),
    ];
    for (mode, data) in runs {
        let (train_set, test) = (data.select(&train_idx), data.select(&test_idx));
        let mut schedule = TrainSchedule::new(mode, 3);
        schedule.epochs = 40;
        schedule.cca_first_m = 30;
        let out = train(&train_set, None, &net, &schedule)?;
        let last = out.logs.last().unwrap();
        println!(
            "{mode:?}: final loss {:.4}, train corr {:.4}, {} replacements, test acc {:.3}",
            last.train_loss,
            last.train_corr,
            out.replacements.len(),
            evaluate(&out.net, &schedule, &test)?
        );
    }
    Ok(())
}

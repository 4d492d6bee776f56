//! BASELINE vs ACCAR when view B is replaced by a noisy copy at test time.
//! Runs the bundled `configs/robustness.json` (5 seeds) and prints the table.
//!
//! cargo run --release --example fusion_robustness [-- <config.json> <out dir>]

use std::path::PathBuf;

use ccafuse::experiment::{mode_name, run_experiment, ExperimentConfig};

fn main() -> ccafuse::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = args.next().map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/robustness.json")
    });
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(std::env::temp_dir);
    let cfg = ExperimentConfig::read(&config)?;
    let report = run_experiment(&cfg, &out.join("ccafuse-robustness"), true)?;

    println!(
        "{:<10} {:>4} {:>8} {:>10} {:>7}",
        "mode", "seed", "clean", "corrupted", "drop"
    );
    for r in &report.runs {
        let m = &r.summary.metrics;
        println!(
            "{:<10} {:>4} {:>8.4} {:>10.4} {:>7.4}",
            mode_name(r.summary.config.schedule.mode),
            r.summary.config.schedule.seed,
            m.test_accuracy,
            m.corrupted_test_accuracy.unwrap_or(f64::NAN),
            m.drop().unwrap_or(f64::NAN)
        );
    }
    for m in &report.comparison.as_ref().unwrap().modes {
        println!(
            "median {:<10} clean {:.4}  corrupted {:.4}  drop {:.4}",
            mode_name(m.mode),
            m.median_test_accuracy,
            m.median_corrupted_test_accuracy.unwrap_or(f64::NAN),
            m.median_drop.unwrap_or(f64::NAN)
        );
    }
    println!("reports in {}", report.dir.display());
    Ok(())
}

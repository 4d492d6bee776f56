//! mAP / mRecall / mIoU on the bundled three-image fixture.
//!
//! cargo run --example detection_metrics

use std::path::Path;

use ccafuse::metrics::{compute_metrics, load_detections, match_greedy};

fn main() -> ccafuse::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/detection_golden");
    let images = load_detections(&dir.join("preds.json"), &dir.join("gts.json"))?;
    for (i, img) in images.iter().enumerate() {
        let m = match_greedy(&img.preds, &img.gts, 0.5);
        println!(
            "image {i}: pairs {:?}, unmatched preds {:?}, unmatched gts {:?}",
            m.pairs, m.unmatched_preds, m.unmatched_gts
        );
    }
    let report = compute_metrics(&images, 0.5, true)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

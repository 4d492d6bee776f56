//! Box overlap, greedy matching, and the detection summary metrics
//! mAP / mRecall / mIoU.
//!
//! "mAP" here is the mean over ground-truth classes of single-threshold
//! precision (matched predictions over all predictions of the class). The
//! usual 11-point interpolated average precision is available separately as
//! [`MetricsReport::per_class_ap11`] when requested.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub class_id: u32,
    /// Confidence; ignored for ground truth.
    #[serde(default = "one")]
    pub score: f64,
}

fn one() -> f64 {
    1.0
}

impl DetBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64, class_id: u32, score: f64) -> Result<Self> {
        let b = Self {
            x1,
            y1,
            x2,
            y2,
            class_id,
            score,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn gt(x1: f64, y1: f64, x2: f64, y2: f64, class_id: u32) -> Result<Self> {
        Self::new(x1, y1, x2, y2, class_id, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let coords = [self.x1, self.y1, self.x2, self.y2, self.score];
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("box {self:?}")));
        }
        if !(self.x1 < self.x2 && self.y1 < self.y2) {
            return Err(Error::param(format!("box corners out of order: {self:?}")));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }
}

/// Intersection over union of two boxes; 0 when disjoint.
pub fn iou(a: &DetBox, b: &DetBox) -> f64 {
    let w = a.x2.min(b.x2) - a.x1.max(b.x1);
    let h = a.y2.min(b.y2) - a.y1.max(b.y1);
    if w <= 0.0 || h <= 0.0 {
        return 0.0;
    }
    let inter = w * h;
    inter / (a.area() + b.area() - inter)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Matching {
    /// `(pred index, gt index, iou)`
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_preds: Vec<usize>,
    pub unmatched_gts: Vec<usize>,
}

/// Predictions in descending score order (index order on ties) each take the
/// highest-IoU unmatched ground truth of their class, if that IoU reaches the
/// threshold. Equal IoUs go to the lower ground-truth index.
pub fn match_greedy(preds: &[DetBox], gts: &[DetBox], iou_threshold: f64) -> Matching {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score));
    let mut gt_taken = vec![false; gts.len()];
    let mut m = Matching::default();
    for p in order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if gt_taken[g] || gt.class_id != preds[p].class_id {
                continue;
            }
            let o = iou(&preds[p], gt);
            if o >= iou_threshold && best.is_none_or(|(_, b)| o > b) {
                best = Some((g, o));
            }
        }
        match best {
            Some((g, o)) => {
                gt_taken[g] = true;
                m.pairs.push((p, g, o));
            }
            None => m.unmatched_preds.push(p),
        }
    }
    m.unmatched_preds.sort_unstable();
    m.unmatched_gts = (0..gts.len()).filter(|&g| !gt_taken[g]).collect();
    m
}

/// Predictions and ground truth for one image.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ImageDetections {
    pub preds: Vec<DetBox>,
    pub gts: Vec<DetBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub map: f64,
    pub mrecall: f64,
    pub miou: f64,
    /// Single-threshold precision per ground-truth class.
    pub per_class_ap: BTreeMap<u32, f64>,
    pub per_class_recall: BTreeMap<u32, f64>,
    /// Classes predicted but absent from all ground truth; not part of `map`.
    pub unmatched_classes: Vec<u32>,
    /// 11-point interpolated AP per class; only filled when requested.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub per_class_ap11: Option<BTreeMap<u32, f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub map11: Option<f64>,
}

#[derive(Default)]
struct ClassTally {
    preds: usize,
    gts: usize,
    matched: usize,
    /// `(score, is_true_positive)` for the interpolated AP.
    scored: Vec<(f64, bool)>,
}

pub fn compute_metrics(
    images: &[ImageDetections],
    iou_threshold: f64,
    with_ap11: bool,
) -> Result<MetricsReport> {
    if images.is_empty() {
        return Err(Error::param("metrics need at least one image"));
    }
    if !(iou_threshold > 0.0 && iou_threshold < 1.0) {
        return Err(Error::param(format!(
            "IoU threshold {iou_threshold} not in (0, 1)"
        )));
    }
    let mut tally: BTreeMap<u32, ClassTally> = BTreeMap::new();
    let mut ious = Vec::new();
    for img in images {
        for b in img.preds.iter().chain(&img.gts) {
            b.validate()?;
        }
        let m = match_greedy(&img.preds, &img.gts, iou_threshold);
        for p in &img.preds {
            tally.entry(p.class_id).or_default().preds += 1;
        }
        for g in &img.gts {
            tally.entry(g.class_id).or_default().gts += 1;
        }
        for &(p, _, o) in &m.pairs {
            let t = tally.entry(img.preds[p].class_id).or_default();
            t.matched += 1;
            t.scored.push((img.preds[p].score, true));
            ious.push(o);
        }
        for &p in &m.unmatched_preds {
            tally
                .entry(img.preds[p].class_id)
                .or_default()
                .scored
                .push((img.preds[p].score, false));
        }
    }

    let mut per_class_ap = BTreeMap::new();
    let mut per_class_recall = BTreeMap::new();
    let mut per_class_ap11 = BTreeMap::new();
    let mut unmatched_classes = Vec::new();
    for (&class, t) in &mut tally {
        if t.gts == 0 {
            unmatched_classes.push(class);
            continue;
        }
        let precision = if t.preds == 0 {
            0.0
        } else {
            t.matched as f64 / t.preds as f64
        };
        per_class_ap.insert(class, precision);
        per_class_recall.insert(class, t.matched as f64 / t.gts as f64);
        if with_ap11 {
            per_class_ap11.insert(class, interpolated_ap11(&mut t.scored, t.gts));
        }
    }
    let mean = |m: &BTreeMap<u32, f64>| {
        if m.is_empty() {
            0.0
        } else {
            m.values().sum::<f64>() / m.len() as f64
        }
    };
    let miou = if ious.is_empty() {
        0.0
    } else {
        ious.iter().sum::<f64>() / ious.len() as f64
    };
    Ok(MetricsReport {
        map: mean(&per_class_ap),
        mrecall: mean(&per_class_recall),
        miou,
        map11: with_ap11.then(|| mean(&per_class_ap11)),
        per_class_ap11: with_ap11.then_some(per_class_ap11),
        per_class_ap,
        per_class_recall,
        unmatched_classes,
    })
}

/// PASCAL-style 11-point interpolated AP over score-ranked detections.
fn interpolated_ap11(scored: &mut [(f64, bool)], n_gt: usize) -> f64 {
    // Stable: equal scores keep insertion order.
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(scored.len());
    for (i, &(_, hit)) in scored.iter().enumerate() {
        if hit {
            tp += 1;
        }
        curve.push((tp as f64 / n_gt as f64, tp as f64 / (i + 1) as f64));
    }
    (0..=10)
        .map(|r| {
            let r = r as f64 / 10.0;
            curve
                .iter()
                .filter(|(rec, _)| *rec >= r - 1e-12)
                .map(|&(_, p)| p)
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 11.0
}

/// One box of the flat JSON interchange format. Ground-truth records may
/// omit `score`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxRecord {
    pub image_id: u64,
    pub class_id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoxRecord {
    fn to_box(&self) -> Result<DetBox> {
        DetBox::new(
            self.x1,
            self.y1,
            self.x2,
            self.y2,
            self.class_id,
            self.score.unwrap_or(1.0),
        )
    }
}

/// Groups flat records by `image_id` (ascending). Images that appear in only
/// one of the two lists still count.
pub fn group_by_image(preds: &[BoxRecord], gts: &[BoxRecord]) -> Result<Vec<ImageDetections>> {
    let mut images: BTreeMap<u64, ImageDetections> = BTreeMap::new();
    for r in preds {
        images
            .entry(r.image_id)
            .or_default()
            .preds
            .push(r.to_box()?);
    }
    for r in gts {
        images.entry(r.image_id).or_default().gts.push(r.to_box()?);
    }
    Ok(images.into_values().collect())
}

pub fn read_box_records(path: &Path) -> Result<Vec<BoxRecord>> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn load_detections(preds: &Path, gts: &Path) -> Result<Vec<ImageDetections>> {
    group_by_image(&read_box_records(preds)?, &read_box_records(gts)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64, c: u32, s: f64) -> DetBox {
        DetBox::new(x1, y1, x2, y2, c, s).unwrap()
    }

    #[test]
    fn iou_cases() {
        let a = b(0.0, 0.0, 1.0, 1.0, 0, 1.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b(2.0, 2.0, 3.0, 3.0, 0, 1.0)), 0.0);
        assert_eq!(iou(&a, &b(1.0, 0.0, 2.0, 1.0, 0, 1.0)), 0.0);
        let half = b(0.5, 0.0, 1.5, 1.0, 0, 1.0);
        assert!((iou(&a, &half) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn invalid_box_rejected() {
        assert!(DetBox::new(1.0, 0.0, 1.0, 2.0, 0, 0.5).is_err());
        assert!(DetBox::new(0.0, 0.0, 1.0, f64::NAN, 0, 0.5).is_err());
    }

    #[test]
    fn two_preds_one_gt() {
        let gt = [b(0.0, 0.0, 10.0, 10.0, 1, 1.0)];
        let preds = [
            b(0.0, 0.0, 10.0, 9.0, 1, 0.6),
            b(0.0, 0.0, 10.0, 10.0, 1, 0.9),
        ];
        let m = match_greedy(&preds, &gt, 0.5);
        assert_eq!(m.pairs, vec![(1, 0, 1.0)]);
        assert_eq!(m.unmatched_preds, vec![0]);
        assert!(m.unmatched_gts.is_empty());
    }

    #[test]
    fn class_mismatch_never_matches() {
        let gt = [b(0.0, 0.0, 1.0, 1.0, 0, 1.0)];
        let preds = [b(0.0, 0.0, 1.0, 1.0, 1, 1.0)];
        let m = match_greedy(&preds, &gt, 0.5);
        assert!(m.pairs.is_empty());
    }

    #[test]
    fn empty_predictions() {
        let img = ImageDetections {
            preds: vec![],
            gts: vec![b(0.0, 0.0, 1.0, 1.0, 0, 1.0)],
        };
        let r = compute_metrics(&[img], 0.5, false).unwrap();
        assert_eq!((r.map, r.mrecall, r.miou), (0.0, 0.0, 0.0));
    }

    #[test]
    fn prediction_only_class_is_reported_aside() {
        let img = ImageDetections {
            preds: vec![b(0.0, 0.0, 1.0, 1.0, 0, 0.9), b(5.0, 5.0, 6.0, 6.0, 7, 0.8)],
            gts: vec![b(0.0, 0.0, 1.0, 1.0, 0, 1.0)],
        };
        let r = compute_metrics(&[img], 0.5, false).unwrap();
        assert_eq!(r.map, 1.0);
        assert_eq!(r.unmatched_classes, vec![7]);
    }

    #[test]
    fn ap11_perfect_ranking() {
        let img = ImageDetections {
            preds: vec![b(0.0, 0.0, 1.0, 1.0, 0, 0.9), b(3.0, 3.0, 4.0, 4.0, 0, 0.1)],
            gts: vec![b(0.0, 0.0, 1.0, 1.0, 0, 1.0)],
        };
        let r = compute_metrics(&[img], 0.5, true).unwrap();
        assert_eq!(r.map11, Some(1.0));
        assert_eq!(r.map, 0.5);
    }

    #[test]
    fn rejects_empty_and_bad_threshold() {
        assert!(compute_metrics(&[], 0.5, false).is_err());
        assert!(compute_metrics(&[ImageDetections::default()], 1.0, false).is_err());
    }

    fn arb_box() -> impl Strategy<Value = DetBox> {
        (-50.0..50.0f64, -50.0..50.0f64, 0.1..30.0f64, 0.1..30.0f64)
            .prop_map(|(x, y, w, h)| b(x, y, x + w, y + h, 0, 1.0))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), c in arb_box()) {
            let o = iou(&a, &c);
            prop_assert_eq!(o, iou(&c, &a));
            prop_assert!((0.0..=1.0).contains(&o));
            prop_assert_eq!(iou(&a, &a), 1.0);
        }

        #[test]
        fn iou_translation_invariant(a in arb_box(), c in arb_box(), dx in -20.0..20.0f64, dy in -20.0..20.0f64) {
            let shift = |q: &DetBox| b(q.x1 + dx, q.y1 + dy, q.x2 + dx, q.y2 + dy, 0, 1.0);
            prop_assert!((iou(&a, &c) - iou(&shift(&a), &shift(&c))).abs() < 1e-12);
        }
    }
}

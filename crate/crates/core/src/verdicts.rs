//! Pass/violated verdicts for classification and detection outputs.
//!
//! A metamorphic relation here expects the system's answer to be stable
//! under the transformation, so:
//!
//! - **classification** is violated exactly when the follow-up label
//!   differs from the source label (any ground truth is ignored);
//! - **detection** is violated when the follow-up mAP falls more than a
//!   configured threshold (default 0.05) below the source mAP, both
//!   scored against their respective ground truths.
//!
//! mAP is the mean of average precision over the IoU thresholds
//! 0.50, 0.55, …, 0.95. Average precision ranks detections by score
//! (stable: ties keep input order), greedily matches each to the
//! unmatched same-class truth with the highest IoU at or above the
//! threshold (ties → lowest truth index), and sums the raw step-curve
//! area `Δrecall · precision` — no interpolation.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::relations::BoundingBox;

/// Outcome of one metamorphic check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Violated,
}

/// One predicted box with class and confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub class_id: u32,
    pub score: f64,
}

/// One ground-truth box with class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub class_id: u32,
}

/// Violated exactly when the two labels differ.
pub fn classification_verdict(source_label: u32, followup_label: u32) -> Verdict {
    if source_label == followup_label {
        Verdict::Pass
    } else {
        Verdict::Violated
    }
}

/// Intersection-over-union of two boxes; 0 when they do not overlap.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let iy = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = ix * iy;
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// mAP scoring parameters: the IoU thresholds to average over and the
/// drop below which a follow-up run counts as violated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapConfig {
    pub iou_thresholds: Vec<f64>,
    pub drop_threshold: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            // 0.50..0.95 in 0.05 steps, built from integers so each
            // threshold is the exact f64 quotient (50 + 5i)/100.
            iou_thresholds: (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect(),
            drop_threshold: 0.05,
        }
    }
}

/// Average precision of `detections` against `truths` at one IoU
/// threshold.
///
/// Empty vs. empty scores 1 (nothing to find, nothing claimed); one side
/// empty scores 0.
pub fn average_precision(
    detections: &[Detection],
    truths: &[GroundTruth],
    iou_threshold: f64,
) -> f64 {
    if truths.is_empty() {
        return if detections.is_empty() { 1.0 } else { 0.0 };
    }
    if detections.is_empty() {
        return 0.0;
    }

    // Rank by descending score; stable sort keeps input order on ties.
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .score
            .partial_cmp(&detections[a].score)
            .unwrap_or(core::cmp::Ordering::Equal)
    });

    let mut matched = vec![false; truths.len()];
    let mut tp = 0usize;
    let mut ap = 0.0;
    let mut recall_prev = 0.0;
    let total = truths.len() as f64;
    for (rank, &di) in order.iter().enumerate() {
        let d = &detections[di];
        // Best unmatched same-class truth by IoU; strict comparison keeps
        // the lowest index on ties.
        let mut best: Option<(usize, f64)> = None;
        for (ti, t) in truths.iter().enumerate() {
            if matched[ti] || t.class_id != d.class_id {
                continue;
            }
            let overlap = iou(&d.bbox, &t.bbox);
            if overlap >= iou_threshold && best.map_or(true, |(_, b)| overlap > b) {
                best = Some((ti, overlap));
            }
        }
        if let Some((ti, _)) = best {
            matched[ti] = true;
            tp += 1;
            let recall = tp as f64 / total;
            let precision = tp as f64 / (rank + 1) as f64;
            ap += (recall - recall_prev) * precision;
            recall_prev = recall;
        }
    }
    ap
}

/// Mean average precision over the configured IoU thresholds.
pub fn map_score(detections: &[Detection], truths: &[GroundTruth], config: &MapConfig) -> f64 {
    if config.iou_thresholds.is_empty() {
        return 0.0;
    }
    let sum: f64 = config
        .iou_thresholds
        .iter()
        .map(|&t| average_precision(detections, truths, t))
        .sum();
    sum / config.iou_thresholds.len() as f64
}

/// Violated when the follow-up mAP drops more than
/// `config.drop_threshold` below the source mAP.
pub fn detection_verdict(source_map: f64, followup_map: f64, config: &MapConfig) -> Verdict {
    if followup_map < source_map - config.drop_threshold {
        Verdict::Violated
    } else {
        Verdict::Pass
    }
}

//! COCO-style average precision over IoU thresholds 0.50:0.05:0.95 with
//! small / medium / large area buckets.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::instance::{task_iou, Detection, GroundTruth, Task};
use crate::matching::greedy_match;
use crate::nms::score_order;

/// Upper bound (exclusive) of the small bucket, 32 squared.
pub const SMALL_AREA: f64 = 1024.0;
/// Upper bound (exclusive) of the medium bucket, 96 squared.
pub const MEDIUM_AREA: f64 = 9216.0;

/// Half-open area interval `[min, max)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AreaRange {
    pub min: f64,
    pub max: f64,
}

impl AreaRange {
    pub const ALL: AreaRange = AreaRange { min: 0.0, max: f64::INFINITY };
    pub const SMALL: AreaRange = AreaRange { min: 0.0, max: SMALL_AREA };
    pub const MEDIUM: AreaRange = AreaRange { min: SMALL_AREA, max: MEDIUM_AREA };
    pub const LARGE: AreaRange = AreaRange { min: MEDIUM_AREA, max: f64::INFINITY };

    pub fn contains(&self, area: f64) -> bool {
        area >= self.min && area < self.max
    }
}

/// `0.50, 0.55, ..., 0.95`.
pub fn iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalParams {
    pub iou_thresholds: Vec<f64>,
    /// Number of evenly spaced recall levels from 0 to 1 inclusive.
    pub recall_points: usize,
    /// Highest-scoring detections kept per image.
    pub max_dets: usize,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams { iou_thresholds: iou_thresholds(), recall_points: 101, max_dets: 100 }
    }
}

/// One task's row of the report. `None` means the bucket had no ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    #[serde(rename = "AP")]
    pub ap: Option<f64>,
    #[serde(rename = "AP50")]
    pub ap50: Option<f64>,
    #[serde(rename = "AP75")]
    pub ap75: Option<f64>,
    #[serde(rename = "AP_S")]
    pub ap_s: Option<f64>,
    #[serde(rename = "AP_M")]
    pub ap_m: Option<f64>,
    #[serde(rename = "AP_L")]
    pub ap_l: Option<f64>,
}

impl TaskMetrics {
    pub const NAMES: [&'static str; 6] = ["AP", "AP50", "AP75", "AP_S", "AP_M", "AP_L"];

    pub fn values(&self) -> [Option<f64>; 6] {
        [self.ap, self.ap50, self.ap75, self.ap_s, self.ap_m, self.ap_l]
    }
}

/// Interpolated AP from TP flags of the scored, non-ignored detections in
/// descending score order. Precision at each recall level is the best
/// precision reached at that recall or beyond.
pub fn average_precision(labels: &[bool], num_gt: usize, recall_points: usize) -> Option<f64> {
    if num_gt == 0 {
        return None;
    }
    let mut recall = Vec::with_capacity(labels.len());
    let mut precision = Vec::with_capacity(labels.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &hit in labels {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / num_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let steps = (recall_points - 1).max(1) as f64;
    let total: f64 = (0..recall_points)
        .map(|k| {
            let r = k as f64 / steps;
            let idx = recall.partition_point(|&v| v < r);
            precision.get(idx).copied().unwrap_or(0.0)
        })
        .sum();
    Some(total / recall_points as f64)
}

struct ImageData {
    /// Detections in descending score order, truncated to `max_dets`.
    scores: Vec<f64>,
    det_areas: Vec<f64>,
    gt_areas: Vec<f64>,
    ious: Vec<Vec<f64>>,
}

/// Precomputed per-image overlaps, ready to be scored at any threshold and
/// area range.
pub struct Evaluation {
    images: BTreeMap<u64, ImageData>,
    params: EvalParams,
}

impl Evaluation {
    pub fn new(dets: &[Detection], gts: &[GroundTruth], task: Task, params: EvalParams) -> Result<Self> {
        Evaluation::with_measures(dets, gts, params, |d, g| task_iou(task, d, g), |d| d.area(task))
    }

    pub fn with_measures(
        dets: &[Detection],
        gts: &[GroundTruth],
        params: EvalParams,
        iou: impl Fn(&Detection, &GroundTruth) -> Result<f64>,
        det_area: impl Fn(&Detection) -> Result<f64>,
    ) -> Result<Self> {
        let mut by_image: BTreeMap<u64, (Vec<&Detection>, Vec<&GroundTruth>)> = BTreeMap::new();
        for d in dets {
            by_image.entry(d.image_id).or_default().0.push(d);
        }
        for g in gts {
            by_image.entry(g.image_id).or_default().1.push(g);
        }
        let mut images = BTreeMap::new();
        for (id, (ds, gs)) in by_image {
            let owned: Vec<Detection> = ds.into_iter().cloned().collect();
            let order: Vec<usize> = score_order(&owned).into_iter().take(params.max_dets).collect();
            let mut data = ImageData {
                scores: Vec::with_capacity(order.len()),
                det_areas: Vec::with_capacity(order.len()),
                gt_areas: gs.iter().map(|g| g.area).collect(),
                ious: Vec::with_capacity(order.len()),
            };
            for i in order {
                let d = &owned[i];
                data.scores.push(d.score);
                data.det_areas.push(det_area(d)?);
                data.ious.push(gs.iter().map(|g| iou(d, g)).collect::<Result<_>>()?);
            }
            images.insert(id, data);
        }
        Ok(Evaluation { images, params })
    }

    /// AP at one IoU threshold restricted to ground truths inside `range`.
    pub fn ap(&self, threshold: f64, range: AreaRange) -> Option<f64> {
        let mut scored: Vec<(f64, bool)> = Vec::new();
        let mut num_gt = 0;
        for img in self.images.values() {
            let gt_ignore: Vec<bool> = img.gt_areas.iter().map(|&a| !range.contains(a)).collect();
            num_gt += gt_ignore.iter().filter(|&&i| !i).count();
            for (d, m) in greedy_match(&img.ious, &gt_ignore, threshold).into_iter().enumerate() {
                let ignored = match m {
                    Some(g) => gt_ignore[g],
                    None => !range.contains(img.det_areas[d]),
                };
                if !ignored {
                    scored.push((img.scores[d], m.is_some()));
                }
            }
        }
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
        let labels: Vec<bool> = scored.into_iter().map(|(_, hit)| hit).collect();
        average_precision(&labels, num_gt, self.params.recall_points)
    }

    /// Mean AP over the configured threshold grid.
    pub fn mean_ap(&self, range: AreaRange) -> Option<f64> {
        let aps: Option<Vec<f64>> = self.params.iou_thresholds.iter().map(|&t| self.ap(t, range)).collect();
        aps.map(|v| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn metrics(&self) -> TaskMetrics {
        TaskMetrics {
            ap: self.mean_ap(AreaRange::ALL),
            ap50: self.ap(0.5, AreaRange::ALL),
            ap75: self.ap(0.75, AreaRange::ALL),
            ap_s: self.mean_ap(AreaRange::SMALL),
            ap_m: self.mean_ap(AreaRange::MEDIUM),
            ap_l: self.mean_ap(AreaRange::LARGE),
        }
    }
}

pub fn compute_coco_metrics(dets: &[Detection], gts: &[GroundTruth], task: Task) -> Result<TaskMetrics> {
    Ok(Evaluation::new(dets, gts, task, EvalParams::default())?.metrics())
}

/// AP at a single threshold with a caller-supplied overlap measure and no
/// area restriction.
pub fn compute_ap(
    dets: &[Detection],
    gts: &[GroundTruth],
    iou: impl Fn(&Detection, &GroundTruth) -> f64,
    threshold: f64,
) -> Option<f64> {
    let eval = Evaluation::with_measures(dets, gts, EvalParams::default(), |d, g| Ok(iou(d, g)), |_| Ok(0.0))
        .expect("infallible measures");
    eval.ap(threshold, AreaRange::ALL)
}

/// Both task rows; a task is absent when it was not evaluated.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub detection: Option<TaskMetrics>,
    pub segmentation: Option<TaskMetrics>,
}

impl EvalReport {
    pub fn set(&mut self, task: Task, metrics: TaskMetrics) {
        match task {
            Task::Bbox => self.detection = Some(metrics),
            Task::Segm => self.segmentation = Some(metrics),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{box_iou, BBox};

    fn gt(image_id: u64, b: BBox, area: f64) -> GroundTruth {
        GroundTruth { id: 0, image_id, bbox: b, mask: None, area }
    }

    const B: BBox = BBox::new(0.0, 0.0, 10.0, 10.0);

    #[test]
    fn pr_curve_hand_cases() {
        assert_eq!(average_precision(&[true], 1, 101), Some(1.0));
        assert_eq!(average_precision(&[], 1, 101), Some(0.0));
        assert_eq!(average_precision(&[true, false], 1, 101), Some(1.0));
        assert_eq!(average_precision(&[], 0, 101), None);
        // FP first: precision 1/2 at full recall.
        assert_eq!(average_precision(&[false, true], 1, 101), Some(0.5));
    }

    #[test]
    fn compute_ap_cases() {
        let g = [gt(1, B, 100.0)];
        let iou = |d: &Detection, g: &GroundTruth| box_iou(&d.bbox, &g.bbox);
        assert_eq!(compute_ap(&[Detection::new(1, B, 0.9)], &g, iou, 0.5), Some(1.0));
        assert_eq!(compute_ap(&[], &g, iou, 0.5), Some(0.0));
        let far = BBox::new(50.0, 50.0, 10.0, 10.0);
        let dets = [Detection::new(1, far, 0.8), Detection::new(1, B, 0.9)];
        assert_eq!(compute_ap(&dets, &g, iou, 0.5), Some(1.0));
        assert_eq!(compute_ap(&[], &[], iou, 0.5), None);
    }

    #[test]
    fn buckets_are_half_open() {
        assert!(AreaRange::SMALL.contains(1023.0));
        assert!(!AreaRange::SMALL.contains(1024.0));
        assert!(AreaRange::MEDIUM.contains(1024.0));
        assert!(!AreaRange::MEDIUM.contains(9216.0));
        assert!(AreaRange::LARGE.contains(9216.0));
    }

    #[test]
    fn small_ground_truth_only_counts_as_small() {
        let m = compute_coco_metrics(&[Detection::new(1, B, 0.9)], &[gt(1, B, 500.0)], Task::Bbox).unwrap();
        assert_eq!(m.ap_s, Some(1.0));
        assert_eq!(m.ap_m, None);
        assert_eq!(m.ap_l, None);
        assert_eq!(m.ap, Some(1.0));
    }
}

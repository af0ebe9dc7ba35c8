use crate::error::{EvalError, Result};
use crate::geometry::box_iou;
use crate::instance::Detection;

/// Indices of `dets` in descending score order; equal scores keep input order.
pub fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    order
}

/// Greedy box suppression. Anything overlapping an already kept detection
/// by more than `iou_threshold` is dropped. Output is in kept order.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Result<Vec<Detection>> {
    Ok(nms_indices(dets, iou_threshold)?.into_iter().map(|i| dets[i].clone()).collect())
}

/// Indices of the detections [`nms`] keeps, in kept order.
pub fn nms_indices(dets: &[Detection], iou_threshold: f64) -> Result<Vec<usize>> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(EvalError::invalid("nms", format!("IoU threshold must lie in (0, 1], got {iou_threshold}")));
    }
    let mut kept: Vec<usize> = Vec::new();
    for i in score_order(dets) {
        if kept.iter().all(|&k| box_iou(&dets[k].bbox, &dets[i].bbox) <= iou_threshold) {
            kept.push(i);
        }
    }
    Ok(kept)
}

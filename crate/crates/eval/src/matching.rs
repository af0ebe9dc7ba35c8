//! Greedy detection to ground-truth assignment at a single IoU threshold.

/// Assigns each detection (rows of `ious`, already in descending score
/// order) to at most one unused ground truth with IoU at or above
/// `threshold`. Ground truths flagged in `gt_ignore` are only considered
/// when no regular one qualifies. Among candidates the highest IoU wins and
/// ties go to the lowest ground-truth index.
pub fn greedy_match(ious: &[Vec<f64>], gt_ignore: &[bool], threshold: f64) -> Vec<Option<usize>> {
    let mut used = vec![false; gt_ignore.len()];
    ious.iter()
        .map(|row| {
            let pick = best_candidate(row, &used, threshold, |g| !gt_ignore[g])
                .or_else(|| best_candidate(row, &used, threshold, |g| gt_ignore[g]));
            if let Some(g) = pick {
                used[g] = true;
            }
            pick
        })
        .collect()
}

fn best_candidate(row: &[f64], used: &[bool], threshold: f64, allowed: impl Fn(usize) -> bool) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (g, &iou) in row.iter().enumerate() {
        if used[g] || !allowed(g) || iou < threshold {
            continue;
        }
        if best.is_none_or(|(_, b)| iou > b) {
            best = Some((g, iou));
        }
    }
    best.map(|(g, _)| g)
}

/// TP/FP labels for score-sorted detections against one image's ground
/// truths, with `iou(d, g)` supplying the overlap.
pub fn match_detections<D, G>(dets: &[D], gts: &[G], iou: impl Fn(&D, &G) -> f64, threshold: f64) -> Vec<bool> {
    let ious: Vec<Vec<f64>> = dets.iter().map(|d| gts.iter().map(|g| iou(d, g)).collect()).collect();
    greedy_match(&ious, &vec![false; gts.len()], threshold).into_iter().map(|m| m.is_some()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_use_ground_truth() {
        let labels = match_detections(&[0.9, 0.7], &[()], |&d, _| d, 0.5);
        assert_eq!(labels, vec![true, false]);
        assert_eq!(match_detections(&[0.6], &[()], |&d, _| d, 0.5), vec![true]);
    }

    #[test]
    fn ties_take_lowest_index() {
        let m = greedy_match(&[vec![0.6, 0.6]], &[false, false], 0.5);
        assert_eq!(m, vec![Some(0)]);
    }

    #[test]
    fn regular_ground_truth_preferred_over_ignored() {
        let m = greedy_match(&[vec![0.9, 0.6]], &[true, false], 0.5);
        assert_eq!(m, vec![Some(1)]);
        let m = greedy_match(&[vec![0.9, 0.3]], &[true, false], 0.5);
        assert_eq!(m, vec![Some(0)]);
    }

    #[test]
    fn threshold_is_inclusive() {
        assert_eq!(greedy_match(&[vec![0.5]], &[false], 0.5), vec![Some(0)]);
    }
}

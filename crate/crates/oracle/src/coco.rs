//! Exhaustive reference evaluator. Matching enumerates every admissible
//! assignment and keeps the one that is best for each detection in score
//! order; interpolated precision is taken as a direct maximum over the curve.

use std::cmp::Ordering;

use maisenet_eval::{BBox, BinaryMask, Detection, GroundTruth, Task, TaskMetrics};

fn box_overlap(a: &BBox, b: &BBox) -> f64 {
    let (ax2, ay2, bx2, by2) = (a.x + a.w, a.y + a.h, b.x + b.w, b.y + b.h);
    let w = (ax2.min(bx2) - a.x.max(b.x)).max(0.0);
    let h = (ay2.min(by2) - a.y.max(b.y)).max(0.0);
    let inter = w * h;
    if inter == 0.0 {
        0.0
    } else {
        inter / (a.w * a.h + b.w * b.h - inter)
    }
}

fn pixel_count(m: &BinaryMask) -> usize {
    let mut n = 0;
    for y in 0..m.height() {
        for x in 0..m.width() {
            n += m.get(y, x) as usize;
        }
    }
    n
}

fn mask_overlap(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let (mut i, mut u) = (0usize, 0usize);
    for y in 0..a.height() {
        for x in 0..a.width() {
            let (p, q) = (a.get(y, x), b.get(y, x));
            i += (p && q) as usize;
            u += (p || q) as usize;
        }
    }
    i as f64 / u as f64
}

fn overlap(task: Task, d: &Detection, g: &GroundTruth) -> f64 {
    match task {
        Task::Bbox => box_overlap(&d.bbox, &g.bbox),
        Task::Segm => mask_overlap(d.mask.as_ref().unwrap(), g.mask.as_ref().unwrap()),
    }
}

fn det_area(task: Task, d: &Detection) -> f64 {
    match task {
        Task::Bbox => d.bbox.w * d.bbox.h,
        Task::Segm => pixel_count(d.mask.as_ref().unwrap()) as f64,
    }
}

/// `(matched, regular ground truth, iou, -index)`, compared lexicographically.
type Key = (bool, bool, f64, i64);

fn cmp_key(a: &Key, b: &Key) -> Ordering {
    a.0.cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.partial_cmp(&b.2).unwrap()).then(a.3.cmp(&b.3))
}

fn cmp_seq(a: &[Key], b: &[Key]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        let o = cmp_key(x, y);
        if o != Ordering::Equal {
            return o;
        }
    }
    Ordering::Equal
}

/// Every injective partial assignment of detections to ground truths with
/// IoU at or above the threshold, keeping the lexicographically best.
fn search(
    d: usize,
    ious: &[Vec<f64>],
    regular: &[bool],
    thr: f64,
    used: &mut Vec<bool>,
    current: &mut Vec<(Option<usize>, Key)>,
    best: &mut Option<Vec<(Option<usize>, Key)>>,
) {
    if d == ious.len() {
        let better = match best {
            None => true,
            Some(b) => {
                let ka: Vec<Key> = current.iter().map(|c| c.1).collect();
                let kb: Vec<Key> = b.iter().map(|c| c.1).collect();
                cmp_seq(&ka, &kb) == Ordering::Greater
            }
        };
        if better {
            *best = Some(current.clone());
        }
        return;
    }
    current.push((None, (false, false, 0.0, 0)));
    search(d + 1, ious, regular, thr, used, current, best);
    current.pop();
    for g in 0..regular.len() {
        if used[g] || ious[d][g] < thr {
            continue;
        }
        used[g] = true;
        current.push((Some(g), (true, regular[g], ious[d][g], -(g as i64))));
        search(d + 1, ious, regular, thr, used, current, best);
        current.pop();
        used[g] = false;
    }
}

fn in_range(a: f64, range: (f64, f64)) -> bool {
    a >= range.0 && a < range.1
}

fn ap_at(dets: &[Detection], gts: &[GroundTruth], task: Task, thr: f64, range: (f64, f64)) -> Option<f64> {
    let mut ids: Vec<u64> = dets.iter().map(|d| d.image_id).chain(gts.iter().map(|g| g.image_id)).collect();
    ids.sort();
    ids.dedup();
    let mut scored: Vec<(f64, usize, bool)> = Vec::new();
    let mut regular_total = 0;
    for id in ids {
        let mut ds: Vec<(usize, &Detection)> = dets.iter().filter(|d| d.image_id == id).enumerate().collect();
        ds.sort_by(|a, b| b.1.score.partial_cmp(&a.1.score).unwrap().then(a.0.cmp(&b.0)));
        ds.truncate(100);
        let gs: Vec<&GroundTruth> = gts.iter().filter(|g| g.image_id == id).collect();
        let regular: Vec<bool> = gs.iter().map(|g| in_range(g.area, range)).collect();
        regular_total += regular.iter().filter(|&&r| r).count();
        let ious: Vec<Vec<f64>> = ds.iter().map(|(_, d)| gs.iter().map(|g| overlap(task, d, g)).collect()).collect();
        let mut best = None;
        search(0, &ious, &regular, thr, &mut vec![false; gs.len()], &mut Vec::new(), &mut best);
        for (k, (m, key)) in best.unwrap().into_iter().enumerate() {
            let d = ds[k].1;
            let counted = match m {
                Some(_) => key.1,
                None => in_range(det_area(task, d), range),
            };
            if counted {
                scored.push((d.score, scored.len(), m.is_some()));
            }
        }
    }
    if regular_total == 0 {
        return None;
    }
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut points = Vec::new();
    let mut tp = 0;
    for (i, s) in scored.iter().enumerate() {
        tp += s.2 as usize;
        points.push((tp as f64 / regular_total as f64, tp as f64 / (i + 1) as f64));
    }
    let mut sum = 0.0;
    for k in 0..=100 {
        let r = k as f64 / 100.0;
        let p = points.iter().filter(|pt| pt.0 >= r).map(|pt| pt.1).fold(0.0, f64::max);
        sum += p;
    }
    Some(sum / 101.0)
}

fn mean_over_thresholds(dets: &[Detection], gts: &[GroundTruth], task: Task, range: (f64, f64)) -> Option<f64> {
    let mut total = 0.0;
    for i in 0..10 {
        total += ap_at(dets, gts, task, (50 + 5 * i) as f64 / 100.0, range)?;
    }
    Some(total / 10.0)
}

pub fn reference_metrics(dets: &[Detection], gts: &[GroundTruth], task: Task) -> TaskMetrics {
    let all = (0.0, f64::INFINITY);
    TaskMetrics {
        ap: mean_over_thresholds(dets, gts, task, all),
        ap50: ap_at(dets, gts, task, 0.5, all),
        ap75: ap_at(dets, gts, task, 0.75, all),
        ap_s: mean_over_thresholds(dets, gts, task, (0.0, 32.0 * 32.0)),
        ap_m: mean_over_thresholds(dets, gts, task, (32.0 * 32.0, 96.0 * 96.0)),
        ap_l: mean_over_thresholds(dets, gts, task, (96.0 * 96.0, f64::INFINITY)),
    }
}

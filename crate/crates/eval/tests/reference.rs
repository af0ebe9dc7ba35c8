use maisenet_eval::{box_iou, compute_coco_metrics, BBox, Detection, GroundTruth, Task, TaskMetrics};
use maisenet_oracle::coco::reference_metrics;
use maisenet_oracle::instances::random_instance as instance;

fn assert_close(a: &TaskMetrics, b: &TaskMetrics, tol: f64, ctx: &str) {
    for (i, (x, y)) in a.values().iter().zip(b.values()).enumerate() {
        match (x, y) {
            (Some(x), Some(y)) => assert!((x - y).abs() <= tol, "{ctx} {}: {x} vs {y}", TaskMetrics::NAMES[i]),
            (None, None) => {}
            _ => panic!("{ctx} {}: presence differs {x:?} vs {y:?}", TaskMetrics::NAMES[i]),
        }
    }
}

#[test]
fn bbox_matches_reference_evaluator() {
    for seed in 0..200 {
        let (dets, gts) = instance(seed, Task::Bbox);
        let got = compute_coco_metrics(&dets, &gts, Task::Bbox).unwrap();
        assert_close(&got, &reference_metrics(&dets, &gts, Task::Bbox), 1e-9, &format!("seed {seed}"));
    }
}

#[test]
fn segm_matches_reference_evaluator() {
    for seed in 1000..1200 {
        let (dets, gts) = instance(seed, Task::Segm);
        let got = compute_coco_metrics(&dets, &gts, Task::Segm).unwrap();
        assert_close(&got, &reference_metrics(&dets, &gts, Task::Segm), 1e-9, &format!("seed {seed}"));
    }
}

#[test]
fn order_invariants_on_random_instances() {
    let mut checked = 0;
    for seed in 0..200 {
        let (dets, gts) = instance(seed, Task::Bbox);
        let base = compute_coco_metrics(&dets, &gts, Task::Bbox).unwrap();
        if let (Some(a50), Some(a75), Some(ap)) = (base.ap50, base.ap75, base.ap) {
            assert!(a50 >= a75, "seed {seed}");
            assert!(ap <= a50 + 1e-12, "seed {seed}");
        }
        for v in base.values().into_iter().flatten() {
            assert!((0.0..=1.0).contains(&v));
        }

        // Strictly monotone score maps leave every metric alone.
        let squashed: Vec<Detection> =
            dets.iter().map(|d| Detection { score: d.score.powi(3) * 0.5 + 0.1, ..d.clone() }).collect();
        assert_eq!(compute_coco_metrics(&squashed, &gts, Task::Bbox).unwrap(), base, "seed {seed}");

        // Duplicates only add false positives, provided no detection could
        // claim a second ground truth once its twin took the first.
        if ambiguous(&dets, &gts) {
            continue;
        }
        checked += 1;
        let doubled: Vec<Detection> = dets.iter().chain(dets.iter()).cloned().collect();
        let dup = compute_coco_metrics(&doubled, &gts, Task::Bbox).unwrap();
        for (b, d) in base.values().iter().zip(dup.values()) {
            if let (Some(b), Some(d)) = (b, d) {
                assert!(d <= *b + 1e-12, "seed {seed}: {d} > {b}");
            }
        }
    }
    assert!(checked > 100, "{checked}");
}

/// Some detection overlaps two ground truths at the loosest threshold.
fn ambiguous(dets: &[Detection], gts: &[GroundTruth]) -> bool {
    dets.iter().any(|d| gts.iter().filter(|g| g.image_id == d.image_id && box_iou(&d.bbox, &g.bbox) >= 0.5).count() > 1)
}

#[test]
fn duplicate_can_claim_a_second_ground_truth() {
    // The original takes the better overlap; its copy picks up the other.
    let d = BBox::new(0.0, 0.0, 10.0, 10.0);
    let gts: Vec<GroundTruth> = [BBox::new(0.0, 0.0, 10.0, 9.0), BBox::new(0.0, 0.0, 10.0, 8.0)]
        .into_iter()
        .enumerate()
        .map(|(i, b)| GroundTruth { id: i as u64, image_id: 1, bbox: b, mask: None, area: b.area() })
        .collect();
    let once = compute_coco_metrics(&[Detection::new(1, d, 0.9)], &gts, Task::Bbox).unwrap();
    let twice =
        compute_coco_metrics(&[Detection::new(1, d, 0.9), Detection::new(1, d, 0.9)], &gts, Task::Bbox).unwrap();
    assert!(twice.ap50.unwrap() > once.ap50.unwrap());
}

#[test]
fn perfect_detections_score_one() {
    for seed in 0..50 {
        let (_, gts) = instance(seed, Task::Segm);
        let dets: Vec<Detection> = gts
            .iter()
            .map(|g| Detection { image_id: g.image_id, bbox: g.bbox, score: 0.9, mask: g.mask.clone() })
            .collect();
        for task in [Task::Bbox, Task::Segm] {
            let m = compute_coco_metrics(&dets, &gts, task).unwrap();
            for v in m.values().into_iter().flatten() {
                assert_eq!(v, 1.0, "seed {seed} {task}");
            }
        }
    }
}

#[test]
fn bucket_boundaries() {
    let b = BBox::new(0.0, 0.0, 10.0, 10.0);
    let case = |area: f64| {
        let gt = GroundTruth { id: 1, image_id: 1, bbox: b, mask: None, area };
        compute_coco_metrics(&[Detection::new(1, b, 0.9)], &[gt], Task::Bbox).unwrap()
    };
    let m = case(1023.0);
    assert_eq!((m.ap_s, m.ap_m, m.ap_l), (Some(1.0), None, None));
    let m = case(1024.0);
    assert_eq!((m.ap_s, m.ap_m, m.ap_l), (None, Some(1.0), None));
    let m = case(9215.0);
    assert_eq!((m.ap_s, m.ap_m, m.ap_l), (None, Some(1.0), None));
    let m = case(9216.0);
    assert_eq!((m.ap_s, m.ap_m, m.ap_l), (None, None, Some(1.0)));
}

#[test]
fn unmatched_detection_outside_bucket_is_ignored() {
    let small = BBox::new(0.0, 0.0, 10.0, 10.0);
    let large = BBox::new(20.0, 20.0, 100.0, 100.0);
    let gt = GroundTruth { id: 1, image_id: 1, bbox: small, mask: None, area: 100.0 };
    // The large false positive outranks the true positive but does not
    // count against the small bucket.
    let dets = [Detection::new(1, large, 0.95), Detection::new(1, small, 0.9)];
    let m = compute_coco_metrics(&dets, &[gt], Task::Bbox).unwrap();
    assert_eq!(m.ap_s, Some(1.0));
    assert!(m.ap.unwrap() < 1.0);
}

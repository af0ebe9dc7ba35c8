//! Seeded random evaluation instances: at most 3 images, 4 ground truths and
//! 6 detections on 128x128 images, with boxes in all three size buckets,
//! occasional bucket-boundary areas and tied scores.

use maisenet_eval::{BBox, BinaryMask, Detection, GroundTruth, Task};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EXTENT: usize = 128;

fn random_box(rng: &mut ChaCha8Rng) -> BBox {
    let side = |rng: &mut ChaCha8Rng| match rng.gen_range(0..3) {
        0 => rng.gen_range(4..32) as f64,
        1 => rng.gen_range(32..80) as f64,
        _ => rng.gen_range(96..120) as f64,
    };
    let (w, h) = (side(rng), side(rng));
    let x = rng.gen_range(0..=(EXTENT - w as usize)) as f64;
    let y = rng.gen_range(0..=(EXTENT - h as usize)) as f64;
    BBox::new(x, y, w, h)
}

fn jitter(rng: &mut ChaCha8Rng, b: &BBox) -> BBox {
    let d = |rng: &mut ChaCha8Rng, s: f64| (rng.gen_range(-0.25..0.25) * s).round();
    let w = (b.w + d(rng, b.w)).clamp(2.0, EXTENT as f64);
    let h = (b.h + d(rng, b.h)).clamp(2.0, EXTENT as f64);
    let x = (b.x + d(rng, b.w)).clamp(0.0, EXTENT as f64 - w);
    let y = (b.y + d(rng, b.h)).clamp(0.0, EXTENT as f64 - h);
    BBox::new(x, y, w, h)
}

/// A box mask, sometimes with a corner removed so masks and boxes disagree.
fn mask_for(rng: &mut ChaCha8Rng, b: &BBox) -> BinaryMask {
    let mut m = BinaryMask::from_box(EXTENT, EXTENT, b);
    if rng.gen_bool(0.3) {
        let (cx, cy) = ((b.x + b.w / 2.0) as usize, (b.y + b.h / 2.0) as usize);
        for y in b.y as usize..cy {
            for x in b.x as usize..cx {
                m.set(y, x, false);
            }
        }
    }
    m
}

pub fn random_instance(seed: u64, task: Task) -> (Vec<Detection>, Vec<GroundTruth>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images = rng.gen_range(1..=3u64);
    let mut gts = Vec::new();
    for id in 0..rng.gen_range(0..=4u64) {
        let bbox = random_box(&mut rng);
        let mask = mask_for(&mut rng, &bbox);
        let area = match task {
            Task::Segm => mask.area() as f64,
            // Occasionally land exactly on a bucket boundary.
            Task::Bbox => match rng.gen_range(0..6) {
                0 => 1024.0,
                1 => 9216.0,
                _ => bbox.area(),
            },
        };
        gts.push(GroundTruth { id, image_id: rng.gen_range(1..=images), bbox, mask: Some(mask), area });
    }
    let mut dets = Vec::new();
    for _ in 0..rng.gen_range(0..=6) {
        let (image_id, bbox) = if !gts.is_empty() && rng.gen_bool(0.7) {
            let g = &gts[rng.gen_range(0..gts.len())];
            (g.image_id, jitter(&mut rng, &g.bbox))
        } else {
            (rng.gen_range(1..=images), random_box(&mut rng))
        };
        let score = if rng.gen_bool(0.3) { rng.gen_range(1..=4) as f64 / 4.0 } else { rng.gen_range(0.0..1.0) };
        let mut mask = mask_for(&mut rng, &bbox);
        if mask.is_empty() {
            mask = BinaryMask::from_box(EXTENT, EXTENT, &bbox);
        }
        dets.push(Detection { image_id, bbox, score, mask: Some(mask) });
    }
    (dets, gts)
}

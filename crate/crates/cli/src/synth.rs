//! Synthetic ship scenes: axis-aligned rectangles and ellipses on one image,
//! with areas drawn into requested size buckets.

use maisenet_eval::format::{Dataset, ImageInfo};
use maisenet_eval::{AreaRange, BBox, BinaryMask, Detection, GroundTruth};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::CliError;

pub const MIN_EXTENT: usize = 128;
const IMAGE_ID: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShipShape {
    Rectangle,
    Ellipse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ship {
    pub shape: ShipShape,
    pub bbox: BBox,
    pub mask: BinaryMask,
}

impl Ship {
    pub fn area(&self) -> f64 {
        self.mask.area() as f64
    }
}

/// Ship counts per size bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BucketMix {
    pub small: usize,
    pub medium: usize,
    pub large: usize,
}

impl BucketMix {
    pub fn total(&self) -> usize {
        self.small + self.medium + self.large
    }
}

impl Default for BucketMix {
    fn default() -> Self {
        BucketMix { small: 2, medium: 2, large: 1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub ships: Vec<Ship>,
}

impl SyntheticScene {
    pub fn dataset(&self) -> Dataset {
        Dataset {
            images: vec![ImageInfo {
                id: IMAGE_ID,
                width: self.width,
                height: self.height,
                file_name: format!("synth_{}.png", self.seed),
            }],
            ground_truths: self
                .ships
                .iter()
                .enumerate()
                .map(|(i, s)| GroundTruth {
                    id: i as u64 + 1,
                    image_id: IMAGE_ID,
                    bbox: s.bbox,
                    mask: Some(s.mask.clone()),
                    area: s.area(),
                })
                .collect(),
        }
    }

    /// One detection per ship, identical to its ground truth.
    pub fn perfect_detections(&self) -> Vec<Detection> {
        self.ships
            .iter()
            .map(|s| Detection { image_id: IMAGE_ID, bbox: s.bbox, score: 1.0, mask: Some(s.mask.clone()) })
            .collect()
    }
}

fn side_range(bucket: AreaRange) -> (usize, usize) {
    if bucket == AreaRange::SMALL {
        (6, 32)
    } else if bucket == AreaRange::MEDIUM {
        (36, 90)
    } else {
        (100, 127)
    }
}

fn draw(rng: &mut ChaCha8Rng, height: usize, width: usize, bucket: AreaRange) -> Ship {
    let (lo, hi) = side_range(bucket);
    loop {
        let w = rng.gen_range(lo..=hi.min(width));
        let h = rng.gen_range(lo..=hi.min(height));
        let x = rng.gen_range(0..=width - w) as f64;
        let y = rng.gen_range(0..=height - h) as f64;
        let (w, h) = (w as f64, h as f64);
        let shape = if rng.gen_bool(0.5) { ShipShape::Rectangle } else { ShipShape::Ellipse };
        let mask = match shape {
            ShipShape::Rectangle => BinaryMask::from_box(height, width, &BBox::new(x, y, w, h)),
            ShipShape::Ellipse => {
                let (cx, cy, rx, ry) = (x + w / 2.0, y + h / 2.0, w / 2.0, h / 2.0);
                BinaryMask::from_fn(height, width, |row, col| {
                    let dx = (col as f64 + 0.5 - cx) / rx;
                    let dy = (row as f64 + 0.5 - cy) / ry;
                    dx * dx + dy * dy <= 1.0
                })
            }
        };
        let Some(bbox) = mask.bounding_box() else {
            continue;
        };
        if bucket.contains(mask.area() as f64) {
            return Ship { shape, bbox, mask };
        }
    }
}

pub fn synth_scene(seed: u64, height: usize, width: usize, mix: BucketMix) -> Result<SyntheticScene, CliError> {
    if height < MIN_EXTENT || width < MIN_EXTENT {
        return Err(CliError::usage(
            format!("scene extents {height}x{width} are below {MIN_EXTENT}"),
            "large ships need at least 128 pixels per side",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ships = Vec::with_capacity(mix.total());
    for (bucket, count) in
        [(AreaRange::SMALL, mix.small), (AreaRange::MEDIUM, mix.medium), (AreaRange::LARGE, mix.large)]
    {
        for _ in 0..count {
            ships.push(draw(&mut rng, height, width, bucket));
        }
    }
    Ok(SyntheticScene { seed, height, width, ships })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn buckets_are_respected() {
        for seed in 0..20 {
            let scene = synth_scene(seed, 128, 160, BucketMix::default()).unwrap();
            let areas: Vec<f64> = scene.ships.iter().map(Ship::area).collect();
            assert!(areas[..2].iter().all(|&a| a < 1024.0));
            assert!(areas[2..4].iter().all(|&a| (1024.0..9216.0).contains(&a)));
            assert!(areas[4] >= 9216.0);
        }
    }

    #[test]
    fn boxes_enclose_masks() {
        let scene = synth_scene(3, 128, 128, BucketMix::default()).unwrap();
        for s in &scene.ships {
            assert_eq!(s.mask.bounding_box(), Some(s.bbox));
            assert!(BinaryMask::from_box(128, 128, &s.bbox).area() >= s.mask.area());
        }
    }

    #[test]
    fn small_extents_rejected() {
        assert!(synth_scene(0, 127, 200, BucketMix::default()).is_err());
    }
}

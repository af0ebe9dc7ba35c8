//! Binary masks with the column-major run-length codec used by COCO-style
//! annotation files.

use crate::error::{EvalError, Result};
use crate::geometry::BBox;

/// Dense `height x width` mask stored column-major (`x * height + y`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(height: usize, width: usize) -> Self {
        BinaryMask { height, width, bits: vec![false; height * width] }
    }

    /// `f(row, col)` decides each pixel.
    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for x in 0..width {
            for y in 0..height {
                bits.push(f(y, x));
            }
        }
        BinaryMask { height, width, bits }
    }

    /// Pixels whose centers fall inside the box.
    pub fn from_box(height: usize, width: usize, b: &BBox) -> Self {
        BinaryMask::from_fn(height, width, |y, x| {
            let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
            cx > b.x && cx < b.x + b.w && cy > b.y && cy < b.y + b.h
        })
    }

    /// Union of polygons given as flat `[x0, y0, x1, y1, ...]` vertex lists,
    /// rasterized by an even-odd test at pixel centers.
    pub fn from_polygons(height: usize, width: usize, polygons: &[Vec<f64>]) -> Self {
        let mut mask = BinaryMask::empty(height, width);
        for poly in polygons {
            let pts: Vec<(f64, f64)> = poly.chunks_exact(2).map(|p| (p[0], p[1])).collect();
            if pts.len() < 3 {
                continue;
            }
            for x in 0..width {
                for y in 0..height {
                    if point_in_polygon(&pts, x as f64 + 0.5, y as f64 + 0.5) {
                        mask.bits[x * height + y] = true;
                    }
                }
            }
        }
        mask
    }

    pub fn from_rle(height: usize, width: usize, counts: &[u64]) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total != (height * width) as u64 {
            return Err(EvalError::invalid(
                "rle",
                format!("counts sum to {total}, expected {height}x{width} = {}", height * width),
            ));
        }
        let mut bits = Vec::with_capacity(height * width);
        let mut value = false;
        for &run in counts {
            bits.extend(std::iter::repeat_n(value, run as usize));
            value = !value;
        }
        Ok(BinaryMask { height, width, bits })
    }

    /// Column-major run lengths, alternating zeros and ones, starting with a
    /// (possibly empty) zero run.
    pub fn to_rle(&self) -> Vec<u64> {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u64;
        for &b in &self.bits {
            if b != current {
                counts.push(run);
                run = 0;
                current = b;
            }
            run += 1;
        }
        counts.push(run);
        counts
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[col * self.height + row]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[col * self.height + row] = value;
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Tight pixel bounding box of the set pixels, `None` when empty.
    pub fn bounding_box(&self) -> Option<BBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for x in 0..self.width {
            for y in 0..self.height {
                if self.get(y, x) {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x + 1);
                    y1 = y1.max(y + 1);
                }
            }
        }
        (x0 != usize::MAX).then(|| BBox::new(x0 as f64, y0 as f64, (x1 - x0) as f64, (y1 - y0) as f64))
    }

    fn check_extents(&self, other: &BinaryMask) -> Result<()> {
        if self.height != other.height || self.width != other.width {
            return Err(EvalError::ExtentMismatch {
                a_h: self.height,
                a_w: self.width,
                b_h: other.height,
                b_w: other.width,
            });
        }
        Ok(())
    }
}

fn point_in_polygon(pts: &[(f64, f64)], px: f64, py: f64) -> bool {
    let mut inside = false;
    let mut j = pts.len() - 1;
    for i in 0..pts.len() {
        let (xi, yi) = pts[i];
        let (xj, yj) = pts[j];
        if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.check_extents(b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &q) in a.bits.iter().zip(&b.bits) {
        inter += (p && q) as usize;
        union += (p || q) as usize;
    }
    if union == 0 {
        return Err(EvalError::EmptyMasks);
    }
    Ok(inter as f64 / union as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rle_starts_with_zero_run() {
        let m = BinaryMask::from_fn(2, 2, |_, _| true);
        assert_eq!(m.to_rle(), vec![0, 4]);
        assert_eq!(BinaryMask::empty(2, 3).to_rle(), vec![6]);
        let m = BinaryMask::from_fn(3, 1, |y, _| y == 1);
        assert_eq!(m.to_rle(), vec![1, 1, 1]);
    }

    #[test]
    fn rle_is_column_major() {
        // Only the pixel at row 0, column 1 is set.
        let m = BinaryMask::from_fn(2, 2, |y, x| y == 0 && x == 1);
        assert_eq!(m.to_rle(), vec![2, 1, 1]);
        assert_eq!(BinaryMask::from_rle(2, 2, &[2, 1, 1]).unwrap(), m);
    }

    #[test]
    fn rle_rejects_bad_sum() {
        assert!(BinaryMask::from_rle(2, 2, &[1, 2]).is_err());
    }

    #[test]
    fn iou_hand_cases() {
        // Two 4-pixel masks sharing a 2x1 strip.
        let a = BinaryMask::from_fn(4, 4, |y, x| y < 2 && x < 2);
        let b = BinaryMask::from_fn(4, 4, |y, x| y < 2 && (1..3).contains(&x));
        assert!((mask_iou(&a, &b).unwrap() - 2.0 / 6.0).abs() < 1e-15);
        assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        let c = BinaryMask::from_fn(4, 4, |y, _| y == 3);
        assert_eq!(mask_iou(&a, &c).unwrap(), 0.0);
        let e = BinaryMask::empty(4, 4);
        assert!(matches!(mask_iou(&e, &e), Err(EvalError::EmptyMasks)));
        assert!(mask_iou(&a, &BinaryMask::empty(4, 5)).is_err());
    }

    #[test]
    fn polygon_square_covers_whole_pixels() {
        let m = BinaryMask::from_polygons(10, 10, &[vec![2.0, 3.0, 6.0, 3.0, 6.0, 5.0, 2.0, 5.0]]);
        assert_eq!(m.area(), 8);
        assert_eq!(m.bounding_box(), Some(BBox::new(2.0, 3.0, 4.0, 2.0)));
    }
}

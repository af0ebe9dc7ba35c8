//! COCO-subset JSON files: a ground-truth document with `images` and
//! `annotations`, and a flat array of detections. Unknown fields are
//! ignored; everything else is checked and errors name the offending path.

use std::collections::{BTreeMap, HashSet};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};
use crate::geometry::BBox;
use crate::instance::{Detection, GroundTruth};
use crate::mask::BinaryMask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub id: u64,
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub file_name: String,
}

/// Polygon list or uncompressed RLE with `size = [height, width]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Segmentation {
    Polygons(Vec<Vec<f64>>),
    Rle { counts: Vec<u64>, size: [usize; 2] },
}

impl Segmentation {
    pub fn from_mask(mask: &BinaryMask) -> Self {
        Segmentation::Rle { counts: mask.to_rle(), size: [mask.height(), mask.width()] }
    }

    fn to_mask(&self, image: &ImageInfo, location: &str) -> Result<BinaryMask> {
        match self {
            Segmentation::Polygons(polys) => {
                for (i, p) in polys.iter().enumerate() {
                    if p.len() < 6 || p.len() % 2 != 0 {
                        return Err(EvalError::invalid(
                            format!("{location}[{i}]"),
                            format!("polygon needs an even number (>= 6) of coordinates, got {}", p.len()),
                        ));
                    }
                    if let Some(j) = p.iter().position(|v| !v.is_finite()) {
                        return Err(EvalError::invalid(format!("{location}[{i}][{j}]"), "non-finite coordinate"));
                    }
                }
                Ok(BinaryMask::from_polygons(image.height, image.width, polys))
            }
            Segmentation::Rle { counts, size } => {
                if *size != [image.height, image.width] {
                    return Err(EvalError::invalid(
                        format!("{location}.size"),
                        format!(
                            "mask is {}x{} but image {} is {}x{}",
                            size[0], size[1], image.id, image.height, image.width
                        ),
                    ));
                }
                BinaryMask::from_rle(size[0], size[1], counts).map_err(|e| match e {
                    EvalError::Invalid { reason, .. } => EvalError::invalid(format!("{location}.counts"), reason),
                    other => other,
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub id: u64,
    pub image_id: u64,
    pub bbox: [f64; 4],
    pub area: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<Segmentation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFile {
    pub images: Vec<ImageInfo>,
    pub annotations: Vec<AnnotationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: u64,
    pub bbox: [f64; 4],
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<Segmentation>,
}

/// Parsed and validated ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<ImageInfo>,
    pub ground_truths: Vec<GroundTruth>,
}

impl Dataset {
    fn image_index(&self) -> BTreeMap<u64, &ImageInfo> {
        self.images.iter().map(|i| (i.id, i)).collect()
    }
}

fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let value: T = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        EvalError::Json { path, message: inner.to_string(), line: inner.line(), column: inner.column() }
    })?;
    Ok(value)
}

fn check_bbox(v: [f64; 4], location: &str) -> Result<BBox> {
    let b = BBox::from_array(v);
    if !b.is_valid() {
        return Err(EvalError::invalid(
            location,
            format!("box {v:?} needs finite coordinates and positive width and height"),
        ));
    }
    Ok(b)
}

pub fn parse_ground_truth(text: &str) -> Result<Dataset> {
    let raw: GroundTruthFile = parse_json(text)?;
    let mut images: BTreeMap<u64, &ImageInfo> = BTreeMap::new();
    for (i, img) in raw.images.iter().enumerate() {
        if img.width == 0 || img.height == 0 {
            return Err(EvalError::invalid(format!("images[{i}]"), "width and height must be positive"));
        }
        if images.insert(img.id, img).is_some() {
            return Err(EvalError::invalid(format!("images[{i}].id"), format!("duplicate image id {}", img.id)));
        }
    }
    let mut seen = HashSet::new();
    let mut ground_truths = Vec::with_capacity(raw.annotations.len());
    for (i, a) in raw.annotations.iter().enumerate() {
        let loc = format!("annotations[{i}]");
        if !seen.insert(a.id) {
            return Err(EvalError::invalid(format!("{loc}.id"), format!("duplicate annotation id {}", a.id)));
        }
        let image = images
            .get(&a.image_id)
            .ok_or_else(|| EvalError::invalid(format!("{loc}.image_id"), format!("unknown image id {}", a.image_id)))?;
        let bbox = check_bbox(a.bbox, &format!("{loc}.bbox"))?;
        if !(a.area.is_finite() && a.area > 0.0) {
            return Err(EvalError::invalid(format!("{loc}.area"), format!("area must be positive, got {}", a.area)));
        }
        let mask = match &a.segmentation {
            None => None,
            Some(s) => {
                let m = s.to_mask(image, &format!("{loc}.segmentation"))?;
                if m.is_empty() {
                    return Err(EvalError::invalid(format!("{loc}.segmentation"), "segmentation covers no pixel"));
                }
                Some(m)
            }
        };
        ground_truths.push(GroundTruth { id: a.id, image_id: a.image_id, bbox, mask, area: a.area });
    }
    Ok(Dataset { images: raw.images, ground_truths })
}

/// Detections are checked against the image table of `dataset`.
pub fn parse_detections(text: &str, dataset: &Dataset) -> Result<Vec<Detection>> {
    let raw: Vec<DetectionRecord> = parse_json(text)?;
    let images = dataset.image_index();
    raw.iter()
        .enumerate()
        .map(|(i, r)| {
            let loc = format!("[{i}]");
            let image = images.get(&r.image_id).ok_or_else(|| {
                EvalError::invalid(format!("{loc}.image_id"), format!("unknown image id {}", r.image_id))
            })?;
            let bbox = check_bbox(r.bbox, &format!("{loc}.bbox"))?;
            if !(r.score.is_finite() && (0.0..=1.0).contains(&r.score)) {
                return Err(EvalError::invalid(
                    format!("{loc}.score"),
                    format!("score must lie in [0, 1], got {}", r.score),
                ));
            }
            let mask = r.segmentation.as_ref().map(|s| s.to_mask(image, &format!("{loc}.segmentation"))).transpose()?;
            Ok(Detection { image_id: r.image_id, bbox, score: r.score, mask })
        })
        .collect()
}

/// Detections without an image table; masks are dropped.
pub fn parse_box_detections(text: &str) -> Result<Vec<Detection>> {
    let raw: Vec<DetectionRecord> = parse_json(text)?;
    raw.iter()
        .enumerate()
        .map(|(i, r)| {
            let bbox = check_bbox(r.bbox, &format!("[{i}].bbox"))?;
            if !r.score.is_finite() {
                return Err(EvalError::invalid(format!("[{i}].score"), "score must be finite"));
            }
            Ok(Detection::new(r.image_id, bbox, r.score))
        })
        .collect()
}

pub fn detection_records(dets: &[Detection]) -> Vec<DetectionRecord> {
    dets.iter()
        .map(|d| DetectionRecord {
            image_id: d.image_id,
            bbox: d.bbox.to_array(),
            score: d.score,
            segmentation: d.mask.as_ref().map(Segmentation::from_mask),
        })
        .collect()
}

pub fn ground_truth_file(dataset: &Dataset) -> GroundTruthFile {
    GroundTruthFile {
        images: dataset.images.clone(),
        annotations: dataset
            .ground_truths
            .iter()
            .map(|g| AnnotationRecord {
                id: g.id,
                image_id: g.image_id,
                bbox: g.bbox.to_array(),
                area: g.area,
                segmentation: g.mask.as_ref().map(Segmentation::from_mask),
            })
            .collect(),
    }
}

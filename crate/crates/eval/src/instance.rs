use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};
use crate::geometry::{box_iou, BBox};
use crate::mask::{mask_iou, BinaryMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Bbox,
    Segm,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Bbox => "bbox",
            Task::Segm => "segm",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub image_id: u64,
    pub bbox: BBox,
    pub score: f64,
    pub mask: Option<BinaryMask>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub id: u64,
    pub image_id: u64,
    pub bbox: BBox,
    pub mask: Option<BinaryMask>,
    /// Annotated area in pixels; this is what size buckets look at.
    pub area: f64,
}

impl Detection {
    pub fn new(image_id: u64, bbox: BBox, score: f64) -> Self {
        Detection { image_id, bbox, score, mask: None }
    }

    /// Area used to decide whether an unmatched detection falls in a bucket.
    pub fn area(&self, task: Task) -> Result<f64> {
        match task {
            Task::Bbox => Ok(self.bbox.area()),
            Task::Segm => Ok(self.mask_for(task)?.area() as f64),
        }
    }

    fn mask_for(&self, task: Task) -> Result<&BinaryMask> {
        self.mask.as_ref().ok_or_else(|| {
            EvalError::invalid(
                format!("detection on image {}", self.image_id),
                format!("{task} evaluation needs a segmentation mask"),
            )
        })
    }
}

impl GroundTruth {
    fn mask_for(&self, task: Task) -> Result<&BinaryMask> {
        self.mask.as_ref().ok_or_else(|| {
            EvalError::invalid(
                format!("annotation {}", self.id),
                format!("{task} evaluation needs a segmentation mask"),
            )
        })
    }
}

/// Overlap between a detection and a ground truth under the task's measure.
pub fn task_iou(task: Task, d: &Detection, g: &GroundTruth) -> Result<f64> {
    match task {
        Task::Bbox => Ok(box_iou(&d.bbox, &g.bbox)),
        Task::Segm => mask_iou(d.mask_for(task)?, g.mask_for(task)?),
    }
}

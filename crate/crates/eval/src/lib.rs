//! Detection and instance-mask evaluation: box and mask IoU, run-length
//! masks, greedy NMS and COCO-style AP with size buckets.

pub mod error;
pub mod format;
pub mod geometry;
pub mod instance;
pub mod mask;
pub mod matching;
pub mod metrics;
pub mod nms;
pub mod report;

pub use error::{EvalError, Result};
pub use geometry::{box_iou, BBox};
pub use instance::{task_iou, Detection, GroundTruth, Task};
pub use mask::{mask_iou, BinaryMask};
pub use matching::{greedy_match, match_detections};
pub use metrics::{
    average_precision, compute_ap, compute_coco_metrics, AreaRange, EvalParams, EvalReport, Evaluation, TaskMetrics,
};
pub use nms::{nms, nms_indices};
pub use report::render_table;

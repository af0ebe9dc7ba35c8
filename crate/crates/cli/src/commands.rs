//! One function per subcommand. Each returns its machine-readable result;
//! printing and exit codes are left to the binary.

use std::path::Path;

use maisenet_core::blockcheck::{check_block_with, LINEAR_TOLERANCE};
use maisenet_core::mai::mai_chain_forward;
use maisenet_core::se::{se_forward, Pyramid};
use maisenet_core::{BlockKind, GradCheckResult, Shape, Tensor};
use maisenet_eval::format::{
    detection_records, ground_truth_file, parse_box_detections, parse_detections, parse_ground_truth, DetectionRecord,
};
use maisenet_eval::{compute_coco_metrics, nms_indices, EvalReport, Task};
use serde::Serialize;

use crate::config::{init_weights, load_weights, RunConfig};
use crate::error::CliError;
use crate::suite::{run_suite, CheckReport, CheckResult, Context};
use crate::synth::{synth_scene, BucketMix};

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn check_tolerance(tol: f64) -> Result<(), CliError> {
    if tol.is_finite() && tol > 0.0 {
        Ok(())
    } else {
        Err(CliError::usage(format!("tolerance {tol} is not positive"), "pass a value such as --tol 1e-4"))
    }
}

pub fn cmd_check(seed: u64, tolerance: f64, progress: impl FnMut(&CheckResult)) -> Result<CheckReport, CliError> {
    check_tolerance(tolerance)?;
    Ok(run_suite(&Context { seed, tolerance }, progress))
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckEntry {
    pub block: BlockKind,
    pub seed: u64,
    pub tolerance: f64,
    #[serde(flatten)]
    pub result: GradCheckResult,
}

/// Finite-difference checks of `blocks` at each seed. Linear blocks are held
/// to the tighter of `tolerance` and the linear tolerance.
pub fn cmd_gradcheck(blocks: &[BlockKind], seeds: &[u64], tolerance: f64) -> Result<Vec<GradCheckEntry>, CliError> {
    check_tolerance(tolerance)?;
    let mut out = Vec::new();
    for &block in blocks {
        let tol = if block.is_linear() { LINEAR_TOLERANCE.min(tolerance) } else { tolerance };
        for &seed in seeds {
            let result = check_block_with(block, seed, tol)
                .map_err(|e| CliError::failed(format!("{block} at seed {seed}: {e}")))?;
            out.push(GradCheckEntry { block, seed, tolerance: tol, result });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorStats {
    pub name: String,
    pub shape: [usize; 4],
    pub mean: f64,
    pub variance: f64,
}

impl TensorStats {
    fn of(name: impl Into<String>, t: &Tensor) -> Self {
        TensorStats { name: name.into(), shape: t.shape().0, mean: t.mean(), variance: t.variance() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForwardReport {
    pub seed: u64,
    pub channels: usize,
    pub strides: [usize; 5],
    pub tensors: Vec<TensorStats>,
}

/// Runs scale enhancement on seeded backbone levels and the interaction
/// chain on seeded ROI features.
pub fn cmd_forward(cfg: &RunConfig) -> Result<ForwardReport, CliError> {
    cfg.validate()?;
    let params = match &cfg.weights {
        Some(path) => load_weights(path, cfg)?,
        None => init_weights(cfg, cfg.seed),
    };
    let c = cfg.channels;
    let backbone: Vec<Tensor> = (0..4)
        .map(|i| {
            let side = cfg.pyramid_base >> i;
            Tensor::uniform(Shape::new(cfg.batch, c, side, side), -1.0, 1.0, cfg.seed.wrapping_add(1 + i as u64))
        })
        .collect();
    let roi =
        Tensor::uniform(Shape::new(cfg.rois, c, cfg.roi_size, cfg.roi_size), -1.0, 1.0, cfg.seed.wrapping_add(100));
    let failed = |what: &str, e: maisenet_core::Error| CliError::failed(format!("{what}: {e}"));
    let pyramid: Pyramid = se_forward(&backbone, &cfg.se(), &params).map_err(|e| failed("scale enhancement", e))?;
    let logits = mai_chain_forward(&roi, &cfg.chain(), &params).map_err(|e| failed("mask interaction", e))?;

    let mut tensors: Vec<TensorStats> =
        backbone.iter().enumerate().map(|(i, t)| TensorStats::of(format!("P{}", i + 2), t)).collect();
    tensors.extend(pyramid.levels().iter().enumerate().map(|(i, t)| TensorStats::of(format!("B{}", i + 1), t)));
    tensors.push(TensorStats::of("roi", &roi));
    tensors.extend(logits.iter().enumerate().map(|(i, t)| TensorStats::of(format!("mask_logits.stage{}", i + 1), t)));
    Ok(ForwardReport { seed: cfg.seed, channels: c, strides: pyramid.strides(), tensors })
}

fn bad_input(path: &Path, e: impl std::fmt::Display, hint: &str) -> CliError {
    CliError::usage(format!("{}: {e}", path.display()), hint)
}

/// Parses both files and evaluates one task.
pub fn cmd_eval(gt_path: &Path, dt_path: &Path, task: Task) -> Result<EvalReport, CliError> {
    let dataset = parse_ground_truth(&read_text(gt_path)?)
        .map_err(|e| bad_input(gt_path, e, "ground truth must be a COCO-subset JSON document"))?;
    let dets = parse_detections(&read_text(dt_path)?, &dataset).map_err(|e| {
        bad_input(dt_path, e, "detections must be a JSON array of {image_id, bbox, score, segmentation}")
    })?;
    if task == Task::Segm {
        if let Some(i) = dets.iter().position(|d| d.mask.is_none()) {
            return Err(CliError::usage(
                format!("{}: [{i}].segmentation is missing", dt_path.display()),
                "mask evaluation needs a segmentation on every detection",
            ));
        }
        if let Some(g) = dataset.ground_truths.iter().find(|g| g.mask.is_none()) {
            return Err(CliError::usage(
                format!("{}: annotation {} has no segmentation", gt_path.display(), g.id),
                "mask evaluation needs a segmentation on every annotation",
            ));
        }
    }
    let metrics =
        compute_coco_metrics(&dets, &dataset.ground_truths, task).map_err(|e| CliError::failed(e.to_string()))?;
    let mut report = EvalReport::default();
    report.set(task, metrics);
    Ok(report)
}

/// Greedy suppression within each image. Records keep every input field;
/// images appear in ascending id order, detections in kept order.
pub fn cmd_nms(path: &Path, iou: f64) -> Result<Vec<DetectionRecord>, CliError> {
    let text = read_text(path)?;
    let dets =
        parse_box_detections(&text).map_err(|e| bad_input(path, e, "input must be a JSON array of detections"))?;
    let records: Vec<DetectionRecord> =
        serde_json::from_str(&text).map_err(|e| bad_input(path, e, "input must be a JSON array of detections"))?;
    let mut images: Vec<u64> = dets.iter().map(|d| d.image_id).collect();
    images.sort_unstable();
    images.dedup();
    let mut out = Vec::new();
    for image in images {
        let idx: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].image_id == image).collect();
        let subset: Vec<_> = idx.iter().map(|&i| dets[i].clone()).collect();
        let kept = nms_indices(&subset, iou).map_err(|e| CliError::usage(e.to_string(), "pass --iou in (0, 1]"))?;
        out.extend(kept.into_iter().map(|k| records[idx[k]].clone()));
    }
    Ok(out)
}

pub struct SynthOutput {
    pub ground_truth: String,
    pub detections: String,
}

/// Ground-truth JSON for a seeded scene plus detections equal to it.
pub fn cmd_synth(seed: u64, height: usize, width: usize, mix: BucketMix) -> Result<SynthOutput, CliError> {
    let scene = synth_scene(seed, height, width, mix)?;
    Ok(SynthOutput {
        ground_truth: to_json(&ground_truth_file(&scene.dataset())),
        detections: to_json(&detection_records(&scene.perfect_detections())),
    })
}

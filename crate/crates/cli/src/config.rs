//! Run configuration and weight files.

use std::path::{Path, PathBuf};

use maisenet_core::archive;
use maisenet_core::mai::aspp::DEFAULT_RATES;
use maisenet_core::mai::chain::{ROI_SIZE, STAGE_IOU_THRESHOLDS};
use maisenet_core::mai::MaiChainConfig;
use maisenet_core::se::{CarafeConfig, GcbConfig, SeConfig};
use maisenet_core::{init_params, ParamSet, ParamSpec};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub channels: usize,
    /// Side of the P2 backbone level; P3..P5 halve it.
    pub pyramid_base: usize,
    /// Images in the synthetic backbone batch.
    pub batch: usize,
    /// ROI feature maps fed to the interaction chain.
    pub rois: usize,
    pub roi_size: usize,
    pub stages: usize,
    pub head_convs: usize,
    pub aspp_rates: Vec<usize>,
    pub cbam_reduction: usize,
    pub cbam_spatial_kernel: usize,
    pub carafe_kernel_up: usize,
    pub carafe_kernel_encoder: usize,
    pub carafe_compressed_channels: usize,
    pub gcb_bottleneck_divisor: usize,
    pub gcb_min_bottleneck: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub weights: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            channels: 16,
            pyramid_base: 32,
            batch: 1,
            rois: 2,
            roi_size: ROI_SIZE,
            stages: STAGE_IOU_THRESHOLDS.len(),
            head_convs: 4,
            aspp_rates: DEFAULT_RATES.to_vec(),
            cbam_reduction: 16,
            cbam_spatial_kernel: 7,
            carafe_kernel_up: 5,
            carafe_kernel_encoder: 3,
            carafe_compressed_channels: 64,
            gcb_bottleneck_divisor: 16,
            gcb_min_bottleneck: 4,
            seed: 0,
            tolerance: 1e-4,
            weights: None,
            ground_truth: None,
            detections: None,
            output: None,
        }
    }
}

impl RunConfig {
    pub fn chain(&self) -> MaiChainConfig {
        MaiChainConfig {
            channels: self.channels,
            stages: self.stages,
            roi_size: self.roi_size,
            head_convs: self.head_convs,
            aspp_rates: self.aspp_rates.clone(),
            cbam_reduction: self.cbam_reduction,
            cbam_spatial_kernel: self.cbam_spatial_kernel,
            stage_iou_thresholds: (0..self.stages)
                .map(|i| STAGE_IOU_THRESHOLDS.get(i).copied().unwrap_or(0.7))
                .collect(),
        }
    }

    pub fn se(&self) -> SeConfig {
        SeConfig {
            carafe: CarafeConfig {
                channels: self.channels,
                factor: 2,
                kernel_up: self.carafe_kernel_up,
                kernel_encoder: self.carafe_kernel_encoder,
                compressed_channels: self.carafe_compressed_channels,
            },
            gcb: GcbConfig {
                channels: self.channels,
                bottleneck_divisor: self.gcb_bottleneck_divisor,
                min_bottleneck: self.gcb_min_bottleneck,
            },
        }
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = self.se().param_specs();
        specs.extend(self.chain().param_specs());
        specs
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let field = |name: &str, ok: bool, hint: &str| {
            if ok {
                Ok(())
            } else {
                Err(CliError::usage(format!("config field `{name}` is invalid"), hint))
            }
        };
        field("channels", self.channels > 0, "use a multiple of 8 with the default block settings")?;
        field(
            "pyramid_base",
            self.pyramid_base >= 8 && self.pyramid_base.is_multiple_of(8),
            "P2..P5 halve the base three times; use a multiple of 8",
        )?;
        field("batch", self.batch > 0, "use at least one image")?;
        field("rois", self.rois > 0, "use at least one ROI")?;
        field("roi_size", self.roi_size > 0, "the mask head expects 14x14 ROI features")?;
        field("head_convs", self.head_convs > 0, "use at least one head convolution")?;
        field(
            "tolerance",
            self.tolerance.is_finite() && self.tolerance > 0.0,
            "use a small positive relative error such as 1e-4",
        )?;
        let invalid =
            |e: maisenet_core::Error| CliError::usage(e.to_string(), "adjust the block hyperparameters in the config");
        self.chain().validate().map_err(invalid)?;
        self.se().validate().map_err(invalid)?;
        Ok(())
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut cfg = parse_config(&text).map_err(|e| e.context(path))?;
    // Relative paths inside a config are relative to the config file.
    let base = path.parent().unwrap_or(Path::new(""));
    for p in [&mut cfg.weights, &mut cfg.ground_truth, &mut cfg.detections, &mut cfg.output].into_iter().flatten() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(cfg)
}

pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::usage(format!("config {path}: {}", e.into_inner()), "see the README for the accepted config fields")
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Seeded weights for every block the config describes.
pub fn init_weights(cfg: &RunConfig, seed: u64) -> ParamSet {
    init_params(&cfg.param_specs(), seed)
}

/// Loads an archive and checks it holds every parameter the config needs.
pub fn load_weights(path: &Path, cfg: &RunConfig) -> Result<ParamSet, CliError> {
    let params = archive::load_params(path).map_err(|e| {
        CliError::usage(format!("{}: {e}", path.display()), "weights must be a tensor archive written by this tool")
    })?;
    let specs = cfg.param_specs();
    params.validate(&specs).map_err(|e| {
        CliError::usage(
            format!("{}: {e}", path.display()),
            "the archive does not match the config; regenerate it or fix `channels` and the block settings",
        )
    })?;
    params.select(&specs).map_err(|e| CliError::usage(e.to_string(), ""))
}

pub fn save_weights(params: &ParamSet, path: &Path) -> Result<(), CliError> {
    archive::save_params(params, path).map_err(|e| CliError::usage(format!("{}: {e}", path.display()), ""))
}

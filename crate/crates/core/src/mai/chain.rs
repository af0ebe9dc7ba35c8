//! Three-stage mask interaction chain.
//!
//! Stage 1 runs its mask head on the ROI features. Every later stage refines
//! the previous head's 14x14 features with ASPP then NLB, fuses them with the
//! ROI features through CSAB, restores `2C -> C` with a 1x1 conv and runs its
//! own head. Each head is four ReLU 3x3 convs, 2x nearest upsampling and a
//! 1x1 logit conv.

use serde::{Deserialize, Serialize};

use crate::block::{expect_channels, run_inference};
use crate::error::{Error, Result};
use crate::mai::aspp::{AsppConfig, DEFAULT_RATES};
use crate::mai::csab::CsabConfig;
use crate::mai::nlb::NlbConfig;
use crate::ops::UpsampleMode;
use crate::params::{BoundParams, ConvLayer, ParamSet, ParamSpec};
use crate::tape::{Tape, Var};
use crate::tensor::{Axis, Tensor};

pub const ROI_SIZE: usize = 14;
pub const STAGE_IOU_THRESHOLDS: [f64; 3] = [0.5, 0.6, 0.7];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaiChainConfig {
    pub channels: usize,
    pub stages: usize,
    pub roi_size: usize,
    pub head_convs: usize,
    pub aspp_rates: Vec<usize>,
    pub cbam_reduction: usize,
    pub cbam_spatial_kernel: usize,
    /// Training-time IoU thresholds per stage; carried as metadata only.
    pub stage_iou_thresholds: Vec<f64>,
}

pub struct MaiChainVars {
    /// One `(N, 1, 2R, 2R)` logit map per stage.
    pub logits: Vec<Var>,
    /// Head features at ROI resolution, one per stage.
    pub head_features: Vec<Var>,
}

impl MaiChainConfig {
    pub fn new(channels: usize) -> Self {
        MaiChainConfig {
            channels,
            stages: 3,
            roi_size: ROI_SIZE,
            head_convs: 4,
            aspp_rates: DEFAULT_RATES.to_vec(),
            cbam_reduction: 16,
            cbam_spatial_kernel: 7,
            stage_iou_thresholds: STAGE_IOU_THRESHOLDS.to_vec(),
        }
    }

    pub fn aspp(&self) -> AsppConfig {
        AsppConfig { channels: self.channels, dilation_rates: self.aspp_rates.clone() }
    }

    pub fn nlb(&self) -> NlbConfig {
        NlbConfig::new(self.channels)
    }

    pub fn csab(&self) -> CsabConfig {
        CsabConfig {
            reduction: self.cbam_reduction,
            spatial_kernel: self.cbam_spatial_kernel,
            ..CsabConfig::new(self.channels)
        }
    }

    fn head_conv(&self) -> ConvLayer {
        ConvLayer::same(self.channels, self.channels, 3, 1)
    }

    fn logit_conv(&self) -> ConvLayer {
        ConvLayer::pointwise(self.channels, 1)
    }

    fn restore(&self) -> ConvLayer {
        ConvLayer::pointwise(2 * self.channels, self.channels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 {
            return Err(Error::InvalidArgument("mai chain needs at least one stage".into()));
        }
        if self.roi_size == 0 {
            return Err(Error::InvalidArgument("mai chain ROI size must be positive".into()));
        }
        if self.stage_iou_thresholds.len() != self.stages {
            return Err(Error::InvalidArgument(format!(
                "{} stage IoU thresholds for {} stages",
                self.stage_iou_thresholds.len(),
                self.stages
            )));
        }
        if self.stages > 1 {
            self.aspp().validate()?;
            self.nlb().validate()?;
            self.csab().validate()?;
        }
        Ok(())
    }

    pub fn stage_prefix(stage: usize) -> String {
        format!("mai.stage{stage}")
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        for stage in 1..=self.stages {
            let p = Self::stage_prefix(stage);
            for j in 0..self.head_convs {
                specs.extend(self.head_conv().specs(&format!("{p}.head.conv{j}")));
            }
            specs.extend(self.logit_conv().specs(&format!("{p}.head.logits")));
            if stage > 1 {
                specs.extend(self.aspp().param_specs(&format!("{p}.aspp")));
                specs.extend(self.nlb().param_specs(&format!("{p}.nlb")));
                specs.extend(self.csab().param_specs(&format!("{p}.csab")));
                specs.extend(self.restore().specs(&format!("{p}.restore")));
            }
        }
        specs
    }

    fn head(&self, tape: &mut Tape, params: &BoundParams, prefix: &str, x: Var) -> Result<(Var, Var)> {
        let mut h = x;
        for j in 0..self.head_convs {
            h = self.head_conv().apply(tape, params, &format!("{prefix}.head.conv{j}"), h)?;
            h = tape.relu(h);
        }
        let up = tape.upsample(h, 2, UpsampleMode::Nearest)?;
        let logits = self.logit_conv().apply(tape, params, &format!("{prefix}.head.logits"), up)?;
        Ok((h, logits))
    }

    pub fn apply(&self, tape: &mut Tape, params: &BoundParams, roi: Var) -> Result<MaiChainVars> {
        self.validate()?;
        expect_channels("mai_chain", tape, roi, self.channels)?;
        let s = tape.shape(roi);
        for axis in [Axis::H, Axis::W] {
            if s.dim(axis) != self.roi_size {
                return Err(Error::Shape {
                    op: "mai_chain",
                    axis,
                    detail: format!("ROI features {s} are not {0}x{0}", self.roi_size),
                });
            }
        }
        let mut logits = Vec::with_capacity(self.stages);
        let mut feats = Vec::with_capacity(self.stages);
        let (h, l) = self.head(tape, params, &Self::stage_prefix(1), roi)?;
        feats.push(h);
        logits.push(l);
        for stage in 2..=self.stages {
            let p = Self::stage_prefix(stage);
            let prev = *feats.last().expect("stage 1 ran");
            let a = self.aspp().apply(tape, params, &format!("{p}.aspp"), prev)?;
            let refined = self.nlb().apply(tape, params, &format!("{p}.nlb"), a)?.output;
            let fused = self.csab().apply(tape, params, &format!("{p}.csab"), roi, refined)?.output;
            let restored = self.restore().apply(tape, params, &format!("{p}.restore"), fused)?;
            let (h, l) = self.head(tape, params, &p, restored)?;
            feats.push(h);
            logits.push(l);
        }
        Ok(MaiChainVars { logits, head_features: feats })
    }
}

/// Mask logits of every stage, in stage order.
pub fn mai_chain_forward(roi: &Tensor, cfg: &MaiChainConfig, params: &ParamSet) -> Result<Vec<Tensor>> {
    run_inference(params, &[roi], |t, p, v| Ok(cfg.apply(t, p, v[0])?.logits))
}

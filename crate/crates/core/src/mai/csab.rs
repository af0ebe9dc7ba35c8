//! Concatenation, shuffle and attention fusion of backbone ROI features with
//! refined features from the previous stage.

use serde::{Deserialize, Serialize};

use crate::block::run_inference;
use crate::error::{Error, Result};
use crate::mai::cbam::CbamConfig;
use crate::params::{BoundParams, ConvLayer, ParamSet, ParamSpec};
use crate::tape::{Tape, Var};
use crate::tensor::{Axis, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsabConfig {
    /// Channels of each source; the fused tensor carries twice as many.
    pub channels: usize,
    pub conv_groups: usize,
    pub shuffle_groups: usize,
    pub reduction: usize,
    pub spatial_kernel: usize,
}

pub struct CsabVars {
    /// Group-conv output before shuffling.
    pub grouped: Var,
    pub shuffled: Var,
    pub channel_attention: Var,
    pub spatial_attention: Var,
    pub output: Var,
}

impl CsabConfig {
    pub fn new(channels: usize) -> Self {
        CsabConfig { channels, conv_groups: 2, shuffle_groups: 2, reduction: 16, spatial_kernel: 7 }
    }

    pub fn fused_channels(&self) -> usize {
        2 * self.channels
    }

    pub fn cbam(&self) -> CbamConfig {
        CbamConfig { channels: self.fused_channels(), reduction: self.reduction, spatial_kernel: self.spatial_kernel }
    }

    pub fn group_conv(&self) -> ConvLayer {
        ConvLayer::same(self.fused_channels(), self.fused_channels(), 3, 1).with_groups(self.conv_groups)
    }

    pub fn validate(&self) -> Result<()> {
        let c2 = self.fused_channels();
        if self.conv_groups == 0 || !c2.is_multiple_of(self.conv_groups) {
            return Err(Error::divisibility(
                "csab",
                format!("{c2} channels not divisible by {} conv groups", self.conv_groups),
            ));
        }
        if self.shuffle_groups == 0 || !c2.is_multiple_of(self.shuffle_groups) {
            return Err(Error::divisibility(
                "csab",
                format!("{c2} channels not divisible by {} shuffle groups", self.shuffle_groups),
            ));
        }
        self.cbam().validate()
    }

    pub fn param_specs(&self, prefix: &str) -> Vec<ParamSpec> {
        let mut specs = self.group_conv().specs(&format!("{prefix}.group_conv"));
        specs.extend(self.cbam().param_specs(&format!("{prefix}.cbam")));
        specs
    }

    pub fn apply(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        prefix: &str,
        backbone: Var,
        previous: Var,
    ) -> Result<CsabVars> {
        self.validate()?;
        let (a, b) = (tape.shape(backbone), tape.shape(previous));
        if a != b {
            let axis = Axis::ALL.into_iter().find(|&ax| a.dim(ax) != b.dim(ax)).expect("shapes differ on some axis");
            return Err(Error::Shape {
                op: "csab",
                axis,
                detail: format!("backbone features {a} vs previous-stage features {b}"),
            });
        }
        if a.c() != self.channels {
            return Err(Error::Shape {
                op: "csab",
                axis: Axis::C,
                detail: format!("inputs have {} channels, block configured for {}", a.c(), self.channels),
            });
        }
        let cat = tape.concat_channels(&[backbone, previous])?;
        let grouped = self.group_conv().apply(tape, params, &format!("{prefix}.group_conv"), cat)?;
        let shuffled = tape.channel_shuffle(grouped, self.shuffle_groups)?;
        let att = self.cbam().apply(tape, params, &format!("{prefix}.cbam"), shuffled)?;
        Ok(CsabVars {
            grouped,
            shuffled,
            channel_attention: att.channel_attention,
            spatial_attention: att.spatial_attention,
            output: att.output,
        })
    }
}

pub fn csab_forward(
    backbone: &Tensor,
    previous: &Tensor,
    cfg: &CsabConfig,
    params: &ParamSet,
    prefix: &str,
) -> Result<Tensor> {
    let out =
        run_inference(params, &[backbone, previous], |t, p, v| Ok(vec![cfg.apply(t, p, prefix, v[0], v[1])?.output]))?;
    Ok(out.into_iter().next().expect("one output"))
}

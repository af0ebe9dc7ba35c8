//! Sequential channel then spatial attention.

use serde::{Deserialize, Serialize};

use crate::block::{expect_channels, run_inference};
use crate::error::{Error, Result};
use crate::ops::PoolKind;
use crate::params::{BoundParams, ConvLayer, ParamSet, ParamSpec};
use crate::tape::{Tape, Var};
use crate::tensor::{Axis, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CbamConfig {
    pub channels: usize,
    /// Hidden width of the shared MLP is `channels / reduction`.
    pub reduction: usize,
    /// Odd side length of the spatial-attention convolution.
    pub spatial_kernel: usize,
}

pub struct CbamVars {
    /// `(N, C, 1, 1)`, strictly inside `(0, 1)`.
    pub channel_attention: Var,
    /// `(N, 1, H, W)`, strictly inside `(0, 1)`.
    pub spatial_attention: Var,
    pub output: Var,
}

impl CbamConfig {
    pub fn new(channels: usize) -> Self {
        CbamConfig { channels, reduction: 16, spatial_kernel: 7 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reduction == 0 || !self.channels.is_multiple_of(self.reduction) || self.channels < self.reduction {
            return Err(Error::divisibility(
                "cbam",
                format!("{} channels not divisible by reduction ratio {}", self.channels, self.reduction),
            ));
        }
        if self.spatial_kernel.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "cbam: spatial kernel must be odd, got {}",
                self.spatial_kernel
            )));
        }
        Ok(())
    }

    pub fn hidden(&self) -> usize {
        self.channels / self.reduction
    }

    fn mlp1(&self) -> ConvLayer {
        ConvLayer::pointwise(self.channels, self.hidden())
    }

    fn mlp2(&self) -> ConvLayer {
        ConvLayer::pointwise(self.hidden(), self.channels)
    }

    fn spatial(&self) -> ConvLayer {
        ConvLayer::same(2, 1, self.spatial_kernel, 1)
    }

    pub fn param_specs(&self, prefix: &str) -> Vec<ParamSpec> {
        let mut specs = self.mlp1().specs(&format!("{prefix}.mlp1"));
        specs.extend(self.mlp2().specs(&format!("{prefix}.mlp2")));
        specs.extend(self.spatial().specs(&format!("{prefix}.spatial")));
        specs
    }

    fn mlp(&self, tape: &mut Tape, params: &BoundParams, prefix: &str, v: Var) -> Result<Var> {
        let h = self.mlp1().apply(tape, params, &format!("{prefix}.mlp1"), v)?;
        let h = tape.relu(h);
        self.mlp2().apply(tape, params, &format!("{prefix}.mlp2"), h)
    }

    pub fn apply(&self, tape: &mut Tape, params: &BoundParams, prefix: &str, x: Var) -> Result<CbamVars> {
        self.validate()?;
        expect_channels("cbam", tape, x, self.channels)?;
        let avg = tape.global_pool(x, PoolKind::Avg)?;
        let max = tape.global_pool(x, PoolKind::Max)?;
        let a = self.mlp(tape, params, prefix, avg)?;
        let m = self.mlp(tape, params, prefix, max)?;
        let logits = tape.add(a, m)?;
        let channel_attention = tape.sigmoid(logits);
        let refined = tape.mul(x, channel_attention)?;

        let mean_map = tape.mean_axis(refined, Axis::C);
        let max_map = tape.max_axis(refined, Axis::C);
        let stats = tape.concat_channels(&[mean_map, max_map])?;
        let logits = self.spatial().apply(tape, params, &format!("{prefix}.spatial"), stats)?;
        let spatial_attention = tape.sigmoid(logits);
        let output = tape.mul(refined, spatial_attention)?;
        Ok(CbamVars { channel_attention, spatial_attention, output })
    }
}

/// Returns `(W_CA, W_SA, output)`.
pub fn cbam_forward(
    input: &Tensor,
    cfg: &CbamConfig,
    params: &ParamSet,
    prefix: &str,
) -> Result<(Tensor, Tensor, Tensor)> {
    let mut out = run_inference(params, &[input], |t, p, v| {
        let r = cfg.apply(t, p, prefix, v[0])?;
        Ok(vec![r.channel_attention, r.spatial_attention, r.output])
    })?;
    let output = out.pop().expect("output");
    let sa = out.pop().expect("spatial");
    Ok((out.pop().expect("channel"), sa, output))
}

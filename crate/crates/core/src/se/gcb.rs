//! Global context block: softmax-pooled context vector, bottleneck transform
//! (1x1, layer norm, ReLU, 1x1) and a broadcast residual add.

use serde::{Deserialize, Serialize};

use crate::block::{expect_channels, run_inference};
use crate::error::{Error, Result};
use crate::params::{BoundParams, ConvLayer, ParamKind, ParamSet, ParamSpec};
use crate::tape::{Tape, Var};
use crate::tensor::{Axis, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GcbConfig {
    pub channels: usize,
    /// Bottleneck width is `max(channels / bottleneck_divisor, min_bottleneck)`.
    pub bottleneck_divisor: usize,
    pub min_bottleneck: usize,
}

pub struct GcbVars {
    pub output: Var,
    /// `(N, 1, 1, HW)`, summing to one per instance.
    pub context_weights: Var,
}

impl GcbConfig {
    pub fn new(channels: usize) -> Self {
        GcbConfig { channels, bottleneck_divisor: 16, min_bottleneck: 4 }
    }

    pub fn bottleneck(&self) -> usize {
        (self.channels / self.bottleneck_divisor).max(self.min_bottleneck)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.bottleneck_divisor == 0 || self.min_bottleneck == 0 {
            return Err(Error::InvalidArgument(format!("gcb: degenerate config {self:?}")));
        }
        Ok(())
    }

    fn context(&self) -> ConvLayer {
        ConvLayer::pointwise(self.channels, 1)
    }

    fn transform1(&self) -> ConvLayer {
        ConvLayer::pointwise(self.channels, self.bottleneck())
    }

    fn transform2(&self) -> ConvLayer {
        ConvLayer::pointwise(self.bottleneck(), self.channels)
    }

    pub fn param_specs(&self, prefix: &str) -> Vec<ParamSpec> {
        let mut specs = self.context().specs(&format!("{prefix}.context"));
        specs.extend(self.transform1().specs(&format!("{prefix}.transform1")));
        let norm_shape = Shape::new(1, self.bottleneck(), 1, 1);
        specs.push(ParamSpec { name: format!("{prefix}.norm.weight"), shape: norm_shape, kind: ParamKind::Gain });
        specs.push(ParamSpec { name: format!("{prefix}.norm.bias"), shape: norm_shape, kind: ParamKind::Bias });
        specs.extend(self.transform2().specs(&format!("{prefix}.transform2")));
        specs
    }

    pub fn apply(&self, tape: &mut Tape, params: &BoundParams, prefix: &str, x: Var) -> Result<GcbVars> {
        self.validate()?;
        expect_channels("gcb", tape, x, self.channels)?;
        let s = tape.shape(x);
        let (n, c, hw) = (s.n(), s.c(), s.plane());

        let logits = self.context().apply(tape, params, &format!("{prefix}.context"), x)?;
        let logits = tape.reshape(logits, Shape::new(n, 1, 1, hw))?;
        let context_weights = tape.softmax(logits, Axis::W);
        let flat = tape.reshape(x, Shape::new(n, 1, c, hw))?;
        let column = tape.transpose(context_weights);
        let ctx = tape.matmul(flat, column)?;
        let ctx = tape.reshape(ctx, Shape::new(n, c, 1, 1))?;

        let t = self.transform1().apply(tape, params, &format!("{prefix}.transform1"), ctx)?;
        let t = tape.layernorm(t);
        let gain = params.get(&format!("{prefix}.norm.weight"))?;
        let shift = params.get(&format!("{prefix}.norm.bias"))?;
        let t = tape.mul(t, gain)?;
        let t = tape.add(t, shift)?;
        let t = tape.relu(t);
        let t = self.transform2().apply(tape, params, &format!("{prefix}.transform2"), t)?;
        let output = tape.add(x, t)?;
        Ok(GcbVars { output, context_weights })
    }
}

/// Returns `(output, context_weights)`.
pub fn gcb_forward(input: &Tensor, cfg: &GcbConfig, params: &ParamSet, prefix: &str) -> Result<(Tensor, Tensor)> {
    let mut out = run_inference(params, &[input], |t, p, v| {
        let r = cfg.apply(t, p, prefix, v[0])?;
        Ok(vec![r.output, r.context_weights])
    })?;
    let w = out.pop().expect("weights");
    Ok((out.pop().expect("output"), w))
}

//! Embedded-Gaussian non-local block.
//!
//! With `theta`, `phi`, `g` projecting `C -> C/4` and `z` projecting back:
//! `A = softmax_j(theta_i . phi_j)`, `y = A g`, `out = x + z(y)`.

use serde::{Deserialize, Serialize};

use crate::block::{expect_channels, run_inference};
use crate::error::{Error, Result};
use crate::params::{BoundParams, ConvLayer, ParamSet, ParamSpec};
use crate::tape::{Tape, Var};
use crate::tensor::{Axis, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NlbConfig {
    pub channels: usize,
}

pub struct NlbVars {
    pub output: Var,
    /// `(N, 1, HW, HW)`; row `i` holds the weights over positions `j`.
    pub attention: Var,
}

impl NlbConfig {
    pub fn new(channels: usize) -> Self {
        NlbConfig { channels }
    }

    pub fn embed_channels(&self) -> usize {
        self.channels / 4
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || !self.channels.is_multiple_of(4) {
            return Err(Error::divisibility("nlb", format!("{} channels not divisible by 4", self.channels)));
        }
        Ok(())
    }

    fn projection(&self) -> ConvLayer {
        ConvLayer::pointwise(self.channels, self.embed_channels())
    }

    fn restore(&self) -> ConvLayer {
        ConvLayer::pointwise(self.embed_channels(), self.channels)
    }

    pub fn param_specs(&self, prefix: &str) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        for name in ["theta", "phi", "g"] {
            specs.extend(self.projection().specs(&format!("{prefix}.{name}")));
        }
        specs.extend(self.restore().specs(&format!("{prefix}.z")));
        specs
    }

    pub fn apply(&self, tape: &mut Tape, params: &BoundParams, prefix: &str, x: Var) -> Result<NlbVars> {
        self.validate()?;
        expect_channels("nlb", tape, x, self.channels)?;
        let s = tape.shape(x);
        let (n, ce, hw) = (s.n(), self.embed_channels(), s.plane());
        let flat = Shape::new(n, 1, ce, hw);

        let theta = self.projection().apply(tape, params, &format!("{prefix}.theta"), x)?;
        let theta = tape.reshape(theta, flat)?;
        let theta = tape.transpose(theta);
        let phi = self.projection().apply(tape, params, &format!("{prefix}.phi"), x)?;
        let phi = tape.reshape(phi, flat)?;
        let logits = tape.matmul(theta, phi)?;
        let attention = tape.softmax(logits, Axis::W);

        let g = self.projection().apply(tape, params, &format!("{prefix}.g"), x)?;
        let g = tape.reshape(g, flat)?;
        let g = tape.transpose(g);
        let y = tape.matmul(attention, g)?;
        let y = tape.transpose(y);
        let y = tape.reshape(y, Shape::new(n, ce, s.h(), s.w()))?;
        let z = self.restore().apply(tape, params, &format!("{prefix}.z"), y)?;
        let output = tape.add(x, z)?;
        Ok(NlbVars { output, attention })
    }
}

/// Returns `(output, attention)`.
pub fn nlb_forward(input: &Tensor, cfg: &NlbConfig, params: &ParamSet, prefix: &str) -> Result<(Tensor, Tensor)> {
    let mut out = run_inference(params, &[input], |t, p, v| {
        let r = cfg.apply(t, p, prefix, v[0])?;
        Ok(vec![r.output, r.attention])
    })?;
    let attention = out.pop().expect("attention");
    Ok((out.pop().expect("output"), attention))
}

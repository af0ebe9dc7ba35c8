//! Content-aware upsampling used to synthesize the extra P1 level.
//!
//! 1x1 channel compression, a `k_encoder` conv predicting `factor^2 * k_up^2`
//! channels, depth-to-space by `factor`, softmax over each `k_up^2` kernel,
//! then reassembly of the `k_up x k_up` source neighborhood.

use serde::{Deserialize, Serialize};

use crate::block::{expect_channels, run_inference};
use crate::error::{Error, Result};
use crate::params::{BoundParams, ConvLayer, ParamSet, ParamSpec};
use crate::tape::{Tape, Var};
use crate::tensor::{Axis, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CarafeConfig {
    pub channels: usize,
    pub factor: usize,
    pub kernel_up: usize,
    pub kernel_encoder: usize,
    /// Requested compressed width; the effective width is clamped to `channels`.
    pub compressed_channels: usize,
}

pub struct CarafeVars {
    pub output: Var,
    /// `(N, k_up^2, factor * H, factor * W)`, normalized over the channel axis.
    pub kernels: Var,
}

impl CarafeConfig {
    pub fn new(channels: usize) -> Self {
        CarafeConfig { channels, factor: 2, kernel_up: 5, kernel_encoder: 3, compressed_channels: 64 }
    }

    pub fn compressed(&self) -> usize {
        self.compressed_channels.min(self.channels)
    }

    pub fn kernel_channels(&self) -> usize {
        self.factor * self.factor * self.kernel_up * self.kernel_up
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.factor == 0 || self.compressed_channels == 0 {
            return Err(Error::InvalidArgument(format!("carafe: degenerate config {self:?}")));
        }
        if self.kernel_up.is_multiple_of(2) || self.kernel_encoder.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "carafe: kernel sizes must be odd (k_up={}, k_encoder={})",
                self.kernel_up, self.kernel_encoder
            )));
        }
        Ok(())
    }

    fn compress(&self) -> ConvLayer {
        ConvLayer::pointwise(self.channels, self.compressed())
    }

    fn encoder(&self) -> ConvLayer {
        ConvLayer::same(self.compressed(), self.kernel_channels(), self.kernel_encoder, 1)
    }

    pub fn param_specs(&self, prefix: &str) -> Vec<ParamSpec> {
        let mut specs = self.compress().specs(&format!("{prefix}.compress"));
        specs.extend(self.encoder().specs(&format!("{prefix}.encoder")));
        specs
    }

    pub fn apply(&self, tape: &mut Tape, params: &BoundParams, prefix: &str, x: Var) -> Result<CarafeVars> {
        self.validate()?;
        expect_channels("carafe", tape, x, self.channels)?;
        let c = self.compress().apply(tape, params, &format!("{prefix}.compress"), x)?;
        let e = self.encoder().apply(tape, params, &format!("{prefix}.encoder"), c)?;
        let e = tape.pixel_shuffle(e, self.factor)?;
        let kernels = tape.softmax(e, Axis::C);
        let output = tape.reassemble(x, kernels, self.kernel_up, self.factor)?;
        Ok(CarafeVars { output, kernels })
    }
}

/// Returns `(upsampled, kernels)`.
pub fn carafe_forward(input: &Tensor, cfg: &CarafeConfig, params: &ParamSet, prefix: &str) -> Result<(Tensor, Tensor)> {
    let mut out = run_inference(params, &[input], |t, p, v| {
        let r = cfg.apply(t, p, prefix, v[0])?;
        Ok(vec![r.output, r.kernels])
    })?;
    let kernels = out.pop().expect("kernels");
    Ok((out.pop().expect("output"), kernels))
}

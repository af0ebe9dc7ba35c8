//! Atrous spatial pyramid pooling: parallel same-spatial 3x3 convolutions at
//! several dilation rates, concatenated and reduced back with a 1x1 conv.

use serde::{Deserialize, Serialize};

use crate::block::{expect_channels, run_inference};
use crate::error::{Error, Result};
use crate::params::{BoundParams, ConvLayer, ParamSet, ParamSpec};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_RATES: [usize; 4] = [2, 3, 4, 5];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AsppConfig {
    pub channels: usize,
    pub dilation_rates: Vec<usize>,
}

impl AsppConfig {
    pub fn new(channels: usize) -> Self {
        AsppConfig { channels, dilation_rates: DEFAULT_RATES.to_vec() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.dilation_rates.is_empty() {
            return Err(Error::InvalidArgument("aspp: channels and dilation rates must be non-empty".into()));
        }
        if self.dilation_rates.contains(&0) {
            return Err(Error::InvalidArgument("aspp: dilation rates must be positive".into()));
        }
        Ok(())
    }

    pub fn branch(&self, i: usize) -> ConvLayer {
        ConvLayer::same(self.channels, self.channels, 3, self.dilation_rates[i])
    }

    pub fn reduction(&self) -> ConvLayer {
        ConvLayer::pointwise(self.channels * self.dilation_rates.len(), self.channels)
    }

    pub fn param_specs(&self, prefix: &str) -> Vec<ParamSpec> {
        let mut specs: Vec<ParamSpec> =
            (0..self.dilation_rates.len()).flat_map(|i| self.branch(i).specs(&format!("{prefix}.branch{i}"))).collect();
        specs.extend(self.reduction().specs(&format!("{prefix}.reduce")));
        specs
    }

    pub fn apply(&self, tape: &mut Tape, params: &BoundParams, prefix: &str, x: Var) -> Result<Var> {
        self.validate()?;
        expect_channels("aspp", tape, x, self.channels)?;
        let branches = (0..self.dilation_rates.len())
            .map(|i| self.branch(i).apply(tape, params, &format!("{prefix}.branch{i}"), x))
            .collect::<Result<Vec<_>>>()?;
        let cat = tape.concat_channels(&branches)?;
        self.reduction().apply(tape, params, &format!("{prefix}.reduce"), cat)
    }
}

pub fn aspp_forward(input: &Tensor, cfg: &AsppConfig, params: &ParamSet, prefix: &str) -> Result<Tensor> {
    let out = run_inference(params, &[input], |t, p, v| Ok(vec![cfg.apply(t, p, prefix, v[0])?]))?;
    Ok(out.into_iter().next().expect("one output"))
}

//! Scale enhancement of a feature pyramid.
//!
//! P2..P5 from the backbone gain a content-aware upsampled P1; all five
//! levels are balanced at P3 (max-pool down, bilinear up, mean), refined by
//! a global context block, and scattered back to every level as a residual.

pub mod carafe;
pub mod gcb;
pub mod pyramid;

use serde::{Deserialize, Serialize};

pub use carafe::{carafe_forward, CarafeConfig};
pub use gcb::{gcb_forward, GcbConfig};
pub use pyramid::{rescale, stride, Pyramid, LEVELS, MIDDLE_LEVEL};

use crate::block::run_inference;
use crate::error::{Error, Result};
use crate::params::{BoundParams, ParamSet, ParamSpec};
use crate::tape::{Tape, Var};
use crate::tensor::{Axis, Tensor};

pub const CARAFE_PREFIX: &str = "se.carafe";
pub const GCB_PREFIX: &str = "se.gcb";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeConfig {
    pub carafe: CarafeConfig,
    pub gcb: GcbConfig,
}

pub struct SeVars {
    pub p1: Var,
    pub balanced: Var,
    pub refined: Var,
    /// B1..B5.
    pub outputs: Vec<Var>,
}

impl SeConfig {
    pub fn new(channels: usize) -> Self {
        SeConfig { carafe: CarafeConfig::new(channels), gcb: GcbConfig::new(channels) }
    }

    pub fn channels(&self) -> usize {
        self.carafe.channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.carafe.channels != self.gcb.channels {
            return Err(Error::InvalidArgument(format!(
                "se: carafe has {} channels but gcb has {}",
                self.carafe.channels, self.gcb.channels
            )));
        }
        if self.carafe.factor != 2 {
            return Err(Error::InvalidArgument(format!(
                "se: P1 generation needs a 2x upsampler, got factor {}",
                self.carafe.factor
            )));
        }
        self.carafe.validate()?;
        self.gcb.validate()
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = self.carafe.param_specs(CARAFE_PREFIX);
        specs.extend(self.gcb.param_specs(GCB_PREFIX));
        specs
    }

    /// `backbone` holds P2..P5.
    pub fn apply(&self, tape: &mut Tape, params: &BoundParams, backbone: &[Var]) -> Result<SeVars> {
        self.validate()?;
        let values: Vec<&Tensor> = backbone.iter().map(|&v| tape.value(v)).collect();
        pyramid::check_levels(&values, LEVELS - 1)?;
        let p1 = self.carafe.apply(tape, params, CARAFE_PREFIX, backbone[0])?.output;
        let mut levels = vec![p1];
        levels.extend_from_slice(backbone);
        let balanced = fbo_apply(tape, &levels)?;
        let refined = self.gcb.apply(tape, params, GCB_PREFIX, balanced)?.output;
        let outputs = reconstruct_apply(tape, &levels, refined)?;
        Ok(SeVars { p1, balanced, refined, outputs })
    }
}

/// Mean of all five levels brought to P3 resolution. Summation runs P1 to P5.
pub fn fbo_apply(tape: &mut Tape, levels: &[Var]) -> Result<Var> {
    let values: Vec<&Tensor> = levels.iter().map(|&v| tape.value(v)).collect();
    pyramid::check_levels(&values, LEVELS)?;
    let mut acc: Option<Var> = None;
    for (i, &lv) in levels.iter().enumerate() {
        let r = rescale(tape, lv, i + 1, MIDDLE_LEVEL)?;
        acc = Some(match acc {
            None => r,
            Some(a) => tape.add(a, r)?,
        });
    }
    Ok(tape.div_scalar(acc.expect("five levels"), LEVELS as f64))
}

/// `B_l = P_l + rescale(refined, 3 -> l)` for every level.
pub fn reconstruct_apply(tape: &mut Tape, levels: &[Var], refined: Var) -> Result<Vec<Var>> {
    let values: Vec<&Tensor> = levels.iter().map(|&v| tape.value(v)).collect();
    pyramid::check_levels(&values, LEVELS)?;
    let (p3, r) = (tape.shape(levels[MIDDLE_LEVEL - 1]), tape.shape(refined));
    if p3 != r {
        let axis = Axis::ALL.into_iter().find(|&a| p3.dim(a) != r.dim(a)).expect("shapes differ");
        return Err(Error::Shape {
            op: "reconstruct_pyramid",
            axis,
            detail: format!("refined map {r} does not match P3 {p3}"),
        });
    }
    levels
        .iter()
        .enumerate()
        .map(|(i, &lv)| {
            let r = rescale(tape, refined, MIDDLE_LEVEL, i + 1)?;
            tape.add(lv, r)
        })
        .collect()
}

pub fn build_p1(p2: &Tensor, cfg: &CarafeConfig, params: &ParamSet) -> Result<Tensor> {
    Ok(carafe_forward(p2, cfg, params, CARAFE_PREFIX)?.0)
}

pub fn fbo_forward(pyr: &Pyramid) -> Result<Tensor> {
    let levels: Vec<&Tensor> = pyr.levels().iter().collect();
    let out = run_inference(&ParamSet::new(), &levels, |t, _, v| Ok(vec![fbo_apply(t, v)?]))?;
    Ok(out.into_iter().next().expect("one output"))
}

pub fn reconstruct_pyramid(pyr: &Pyramid, refined: &Tensor) -> Result<Pyramid> {
    let mut inputs: Vec<&Tensor> = pyr.levels().iter().collect();
    inputs.push(refined);
    let out = run_inference(&ParamSet::new(), &inputs, |t, _, v| reconstruct_apply(t, &v[..LEVELS], v[LEVELS]))?;
    Pyramid::new(out)
}

/// Full scale enhancement from backbone levels P2..P5 to B1..B5.
pub fn se_forward(backbone: &[Tensor], cfg: &SeConfig, params: &ParamSet) -> Result<Pyramid> {
    let inputs: Vec<&Tensor> = backbone.iter().collect();
    let out = run_inference(params, &inputs, |t, p, v| Ok(cfg.apply(t, p, v)?.outputs))?;
    Pyramid::new(out)
}

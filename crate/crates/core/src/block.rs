//! Shared plumbing for running tape-based blocks outside a gradient context.

use crate::error::{Error, Result};
use crate::params::{BoundParams, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::{Axis, Tensor};

/// Runs `f` on an inference tape with `params` bound and `inputs` as leaves,
/// returning the values of the produced vars.
pub fn run_inference<F>(params: &ParamSet, inputs: &[&Tensor], f: F) -> Result<Vec<Tensor>>
where
    F: FnOnce(&mut Tape, &BoundParams, &[Var]) -> Result<Vec<Var>>,
{
    let mut tape = Tape::inference();
    let bound = BoundParams::bind(&mut tape, params);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf((*t).clone())).collect();
    let outs = f(&mut tape, &bound, &vars)?;
    Ok(outs.into_iter().map(|v| tape.value(v).clone()).collect())
}

pub(crate) fn expect_channels(op: &'static str, tape: &Tape, x: Var, channels: usize) -> Result<()> {
    let c = tape.shape(x).c();
    if c != channels {
        return Err(Error::shape(op, Axis::C, format!("input has {c} channels, block configured for {channels}")));
    }
    Ok(())
}

use crate::error::{Error, Result};
use crate::ops::UpsampleMode;
use crate::tape::{Tape, Var};
use crate::tensor::{Axis, Tensor};

pub const LEVELS: usize = 5;
/// Level holding the balanced feature map.
pub const MIDDLE_LEVEL: usize = 3;

/// Stride of pyramid level `level` (1-based): P1 is stride 2, P5 stride 32.
pub fn stride(level: usize) -> usize {
    1 << level
}

/// Five feature maps P1..P5, each half the spatial size of the one before.
#[derive(Debug, Clone, PartialEq)]
pub struct Pyramid {
    levels: Vec<Tensor>,
}

impl Pyramid {
    /// `levels[0]` is P1.
    pub fn new(levels: Vec<Tensor>) -> Result<Self> {
        check_levels(&levels.iter().collect::<Vec<_>>(), LEVELS)?;
        Ok(Pyramid { levels })
    }

    /// Level `l` in `1..=5`.
    pub fn level(&self, l: usize) -> &Tensor {
        &self.levels[l - 1]
    }

    pub fn levels(&self) -> &[Tensor] {
        &self.levels
    }

    pub fn strides(&self) -> [usize; LEVELS] {
        std::array::from_fn(|i| stride(i + 1))
    }

    pub fn into_levels(self) -> Vec<Tensor> {
        self.levels
    }
}

/// Validates a contiguous run of `expected` levels with 2x spacing.
pub(crate) fn check_levels(levels: &[&Tensor], expected: usize) -> Result<()> {
    if levels.len() != expected {
        return Err(Error::InvalidArgument(format!("pyramid has {} levels, expected {expected}", levels.len())));
    }
    let base = levels[0].shape();
    for (i, pair) in levels.windows(2).enumerate() {
        let (fine, coarse) = (pair[0].shape(), pair[1].shape());
        for axis in [Axis::N, Axis::C] {
            if coarse.dim(axis) != base.dim(axis) {
                return Err(Error::shape("pyramid", axis, format!("level {} is {coarse}, level 1 is {base}", i + 2)));
            }
        }
        for axis in [Axis::H, Axis::W] {
            if fine.dim(axis) != 2 * coarse.dim(axis) || coarse.dim(axis) == 0 {
                return Err(Error::shape(
                    "pyramid",
                    axis,
                    format!("adjacent levels {fine} and {coarse} are not 2x apart"),
                ));
            }
        }
    }
    Ok(())
}

/// Moves a map from pyramid level `from` to level `to`: bilinear 2x steps
/// toward finer levels, 2x2 max-pool steps toward coarser ones.
pub fn rescale(tape: &mut Tape, x: Var, from: usize, to: usize) -> Result<Var> {
    let mut v = x;
    if to < from {
        for _ in to..from {
            v = tape.upsample(v, 2, UpsampleMode::Bilinear)?;
        }
    } else {
        for _ in from..to {
            v = tape.maxpool2d(v, 2, 2)?;
        }
    }
    Ok(v)
}

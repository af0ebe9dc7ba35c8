//! Primitive kernels. Every differentiable kernel has a matching backward
//! function; [`crate::tape::Tape`] wires them together.

pub mod conv;
pub mod layout;
pub mod pointwise;
pub mod pool;
pub mod reassemble;
pub mod resample;

pub use conv::{conv2d, conv2d_backward, conv2d_forward, ConvGeometry, ConvGrads, ConvParams};
pub use layout::{
    concat_channels, invert_permutation, matmul_batched, permute_channels, pixel_shuffle, pixel_unshuffle,
    shuffle_permutation, transpose,
};
pub use pointwise::{add, elementwise, layernorm, mul, softmax_axis, Activation, LAYERNORM_EPS};
pub use pool::{global_pool, max_axis, maxpool2d, mean_axis, PoolKind};
pub use reassemble::reassemble;
pub use resample::{upsample, UpsampleMode};

use crate::error::Result;
use crate::tensor::Tensor;

/// Channel shuffle over `groups` consecutive channel blocks.
pub fn channel_shuffle(input: &Tensor, groups: usize) -> Result<Tensor> {
    let perm = shuffle_permutation(input.shape().c(), groups)?;
    permute_channels(input, &perm)
}

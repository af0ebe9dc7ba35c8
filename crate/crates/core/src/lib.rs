//! Mask attention interaction and scale enhancement blocks for instance
//! segmentation, built on a small double-precision tensor library with
//! hand-written vector-Jacobian products and finite-difference checks.

pub mod archive;
pub mod block;
pub mod blockcheck;
pub mod error;
pub mod gradcheck;
pub mod mai;
pub mod ops;
pub mod params;
pub mod se;
pub mod tape;
pub mod tensor;

pub use blockcheck::{check_block, BlockKind};
pub use error::{Error, Result};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckResult};
pub use params::{init_params, BoundParams, ConvLayer, ParamKind, ParamSet, ParamSpec};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Axis, Shape, Tensor};

//! Slow, loop-level reference implementations used only by tests.

#![allow(clippy::needless_range_loop)]

pub mod blocks;
pub mod coco;
pub mod instances;
pub mod nd;
pub mod prims;

pub use nd::Nd;

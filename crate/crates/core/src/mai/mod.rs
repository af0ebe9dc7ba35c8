//! Mask attention interaction: ASPP, non-local block, CSAB fusion and the
//! staged mask chain that links them.

pub mod aspp;
pub mod cbam;
pub mod chain;
pub mod csab;
pub mod nlb;

pub use aspp::{aspp_forward, AsppConfig};
pub use cbam::{cbam_forward, CbamConfig};
pub use chain::{mai_chain_forward, MaiChainConfig};
pub use csab::{csab_forward, CsabConfig};
pub use nlb::{nlb_forward, NlbConfig};

pub use crate::ops::channel_shuffle;

//! Command-line harness: configuration, weight files, synthetic scenes,
//! the invariant suite and the subcommands built on them.

pub mod commands;
pub mod config;
pub mod error;
pub mod suite;
pub mod synth;

pub use config::{init_weights, load_config, load_weights, parse_config, save_weights, RunConfig};
pub use error::{CliError, EXIT_CHECK_FAILED, EXIT_USAGE};
pub use synth::{synth_scene, BucketMix, SyntheticScene};

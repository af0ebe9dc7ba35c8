//! Finite-difference gradient checks for every block at desk sizes
//! (at most 8 channels, at most 16 pixels per side).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcheck::{grad_check, GradCheckOptions, GradCheckResult, Leaf};
use crate::mai::{AsppConfig, CbamConfig, CsabConfig, MaiChainConfig, NlbConfig};
use crate::ops::ConvGeometry;
use crate::params::{init_params, jitter_params, BoundParams, ParamSet, ParamSpec};
use crate::se::{fbo_apply, reconstruct_apply, CarafeConfig, GcbConfig, SeConfig, LEVELS};
use crate::tape::{Tape, Var};
use crate::tensor::{Shape, Tensor};

pub const LINEAR_TOLERANCE: f64 = 1e-6;
pub const NONLINEAR_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Conv,
    ConvStrided,
    ConvDilated,
    ConvGrouped,
    Shuffle,
    Aspp,
    Nlb,
    Cbam,
    Csab,
    Carafe,
    Fbo,
    Gcb,
    Reconstruct,
    Chain,
    Se,
}

impl BlockKind {
    pub const ALL: [BlockKind; 15] = [
        BlockKind::Conv,
        BlockKind::ConvStrided,
        BlockKind::ConvDilated,
        BlockKind::ConvGrouped,
        BlockKind::Shuffle,
        BlockKind::Aspp,
        BlockKind::Nlb,
        BlockKind::Cbam,
        BlockKind::Csab,
        BlockKind::Carafe,
        BlockKind::Fbo,
        BlockKind::Gcb,
        BlockKind::Reconstruct,
        BlockKind::Chain,
        BlockKind::Se,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BlockKind::Conv => "conv",
            BlockKind::ConvStrided => "conv_strided",
            BlockKind::ConvDilated => "conv_dilated",
            BlockKind::ConvGrouped => "conv_grouped",
            BlockKind::Shuffle => "shuffle",
            BlockKind::Aspp => "aspp",
            BlockKind::Nlb => "nlb",
            BlockKind::Cbam => "cbam",
            BlockKind::Csab => "csab",
            BlockKind::Carafe => "carafe",
            BlockKind::Fbo => "fbo",
            BlockKind::Gcb => "gcb",
            BlockKind::Reconstruct => "reconstruct",
            BlockKind::Chain => "chain",
            BlockKind::Se => "se",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        BlockKind::ALL.into_iter().find(|k| k.name() == name)
    }

    /// Blocks that are linear (or piecewise linear through max-pooling) in
    /// every leaf are held to the tighter tolerance.
    pub fn is_linear(self) -> bool {
        matches!(
            self,
            BlockKind::Conv
                | BlockKind::ConvStrided
                | BlockKind::ConvDilated
                | BlockKind::ConvGrouped
                | BlockKind::Shuffle
                | BlockKind::Aspp
                | BlockKind::Fbo
                | BlockKind::Reconstruct
        )
    }

    pub fn tolerance(self) -> f64 {
        if self.is_linear() {
            LINEAR_TOLERANCE
        } else {
            NONLINEAR_TOLERANCE
        }
    }
}

impl std::fmt::Display for BlockKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Leaves are `inputs` followed by every parameter.
struct Case {
    inputs: Vec<Leaf>,
    params: ParamSet,
}

impl Case {
    fn new(specs: &[ParamSpec], inputs: Vec<(&str, Shape)>, seed: u64) -> Self {
        // Jitter so biases and gains are not at their neutral values.
        let params = jitter_params(&init_params(specs, seed), 0.1, seed);
        let inputs = inputs
            .into_iter()
            .enumerate()
            .map(|(i, (name, shape))| {
                let t = Tensor::uniform(shape, -1.0, 1.0, seed.wrapping_mul(31).wrapping_add(i as u64 + 1));
                (name.to_string(), t)
            })
            .collect();
        Case { inputs, params }
    }

    fn run<F>(self, tolerance: f64, seed: u64, f: F) -> Result<GradCheckResult>
    where
        F: Fn(&mut Tape, &BoundParams, &[Var]) -> Result<Vec<Var>> + Sync,
    {
        let k = self.inputs.len();
        let names: Vec<String> = self.params.iter().map(|(n, _)| n.to_string()).collect();
        let mut leaves = self.inputs;
        leaves.extend(self.params.iter().map(|(n, t)| (n.to_string(), t.clone())));
        grad_check(
            |tape, vars| {
                let bound = BoundParams::from_vars(names.iter().cloned().zip(vars[k..].iter().copied()));
                f(tape, &bound, &vars[..k])
            },
            &leaves,
            GradCheckOptions::new(tolerance, seed),
        )
    }
}

fn single_conv(
    seed: u64,
    tolerance: f64,
    c_in: usize,
    c_out: usize,
    k: usize,
    geometry: ConvGeometry,
) -> Result<GradCheckResult> {
    let w = Tensor::uniform(Shape::new(c_out, c_in / geometry.groups, k, k), -1.0, 1.0, seed ^ 0x5eed);
    let b = Tensor::uniform(Shape::new(1, c_out, 1, 1), -1.0, 1.0, seed ^ 0xb1a5);
    let x = Tensor::uniform(Shape::new(2, c_in, 9, 8), -1.0, 1.0, seed);
    let leaves = vec![("input".to_string(), x), ("weight".to_string(), w), ("bias".to_string(), b)];
    grad_check(
        |t, v| Ok(vec![t.conv2d(v[0], v[1], Some(v[2]), geometry)?]),
        &leaves,
        GradCheckOptions::new(tolerance, seed),
    )
}

/// Pyramid level shapes P1..P5 with P1 at `base x base`.
fn pyramid_shapes(channels: usize, base: usize) -> Vec<Shape> {
    (0..LEVELS).map(|l| Shape::new(1, channels, base >> l, base >> l)).collect()
}

const LEVEL_NAMES: [&str; LEVELS] = ["p1", "p2", "p3", "p4", "p5"];

/// Runs the check for `kind` at the given tolerance.
pub fn check_block_with(kind: BlockKind, seed: u64, tolerance: f64) -> Result<GradCheckResult> {
    let tol = tolerance;
    match kind {
        BlockKind::Conv => single_conv(seed, tol, 3, 4, 3, ConvGeometry::same(3, 1)),
        BlockKind::ConvStrided => {
            single_conv(seed, tol, 3, 4, 3, ConvGeometry { stride: 2, padding: 1, ..ConvGeometry::default() })
        }
        BlockKind::ConvDilated => single_conv(seed, tol, 3, 4, 3, ConvGeometry::same(3, 2)),
        BlockKind::ConvGrouped => single_conv(seed, tol, 4, 6, 3, ConvGeometry::same(3, 1).with_groups(2)),
        BlockKind::Shuffle => {
            let x = Tensor::uniform(Shape::new(2, 8, 3, 3), -1.0, 1.0, seed);
            grad_check(
                |t, v| Ok(vec![t.channel_shuffle(v[0], 2)?]),
                &[("input".to_string(), x)],
                GradCheckOptions::new(tol, seed),
            )
        }
        BlockKind::Aspp => {
            let cfg = AsppConfig::new(4);
            let case = Case::new(&cfg.param_specs("aspp"), vec![("input", Shape::new(1, 4, 11, 11))], seed);
            case.run(tol, seed, |t, p, v| Ok(vec![cfg.apply(t, p, "aspp", v[0])?]))
        }
        BlockKind::Nlb => {
            let cfg = NlbConfig::new(8);
            let case = Case::new(&cfg.param_specs("nlb"), vec![("input", Shape::new(2, 8, 4, 4))], seed);
            case.run(tol, seed, |t, p, v| {
                let r = cfg.apply(t, p, "nlb", v[0])?;
                Ok(vec![r.output, r.attention])
            })
        }
        BlockKind::Cbam => {
            let cfg = CbamConfig { reduction: 2, ..CbamConfig::new(8) };
            let case = Case::new(&cfg.param_specs("cbam"), vec![("input", Shape::new(2, 8, 6, 6))], seed);
            case.run(tol, seed, |t, p, v| {
                let r = cfg.apply(t, p, "cbam", v[0])?;
                Ok(vec![r.output, r.channel_attention, r.spatial_attention])
            })
        }
        BlockKind::Csab => {
            let cfg = CsabConfig { reduction: 2, ..CsabConfig::new(4) };
            let s = Shape::new(1, 4, 6, 6);
            let case = Case::new(&cfg.param_specs("csab"), vec![("backbone", s), ("previous", s)], seed);
            case.run(tol, seed, |t, p, v| Ok(vec![cfg.apply(t, p, "csab", v[0], v[1])?.output]))
        }
        BlockKind::Carafe => {
            let cfg = CarafeConfig::new(4);
            let case = Case::new(&cfg.param_specs("carafe"), vec![("input", Shape::new(1, 4, 5, 5))], seed);
            case.run(tol, seed, |t, p, v| {
                let r = cfg.apply(t, p, "carafe", v[0])?;
                Ok(vec![r.output, r.kernels])
            })
        }
        BlockKind::Fbo => {
            let inputs = LEVEL_NAMES.into_iter().zip(pyramid_shapes(2, 16)).collect();
            let case = Case::new(&[], inputs, seed);
            case.run(tol, seed, |t, _, v| Ok(vec![fbo_apply(t, v)?]))
        }
        BlockKind::Gcb => {
            let cfg = GcbConfig::new(8);
            let case = Case::new(&cfg.param_specs("gcb"), vec![("input", Shape::new(2, 8, 6, 6))], seed);
            case.run(tol, seed, |t, p, v| {
                let r = cfg.apply(t, p, "gcb", v[0])?;
                Ok(vec![r.output, r.context_weights])
            })
        }
        BlockKind::Reconstruct => {
            let shapes = pyramid_shapes(2, 16);
            let mut inputs: Vec<(&str, Shape)> = LEVEL_NAMES.into_iter().zip(shapes.iter().copied()).collect();
            inputs.push(("refined", shapes[2]));
            let case = Case::new(&[], inputs, seed);
            case.run(tol, seed, |t, _, v| reconstruct_apply(t, &v[..LEVELS], v[LEVELS]))
        }
        BlockKind::Chain => {
            let cfg = desk_chain_config();
            let roi = Shape::new(1, cfg.channels, cfg.roi_size, cfg.roi_size);
            let case = Case::new(&cfg.param_specs(), vec![("roi", roi)], seed);
            case.run(tol, seed, |t, p, v| Ok(cfg.apply(t, p, v[0])?.logits))
        }
        BlockKind::Se => {
            let cfg = SeConfig::new(4);
            let inputs = LEVEL_NAMES[1..].iter().copied().zip(pyramid_shapes(4, 16).into_iter().skip(1)).collect();
            let case = Case::new(&cfg.param_specs(), inputs, seed);
            case.run(tol, seed, |t, p, v| Ok(cfg.apply(t, p, v)?.outputs))
        }
    }
}

/// Runs the check for `kind` at its default tolerance.
pub fn check_block(kind: BlockKind, seed: u64) -> Result<GradCheckResult> {
    check_block_with(kind, seed, kind.tolerance())
}

/// Small MAI chain used by the gradient suite: four channels, 8x8 ROIs.
pub fn desk_chain_config() -> MaiChainConfig {
    MaiChainConfig { roi_size: 8, cbam_reduction: 2, ..MaiChainConfig::new(4) }
}

impl std::str::FromStr for BlockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BlockKind::from_name(s).ok_or_else(|| {
            let names: Vec<&str> = BlockKind::ALL.iter().map(|k| k.name()).collect();
            Error::InvalidArgument(format!("unknown block {s:?}; expected one of {}", names.join(", ")))
        })
    }
}

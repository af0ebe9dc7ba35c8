//! Named parameter sets, their manifests and seeded initialization.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ops::ConvGeometry;
use crate::tape::{Tape, Var};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Convolution kernel, initialized from `U(-b, b)` with `b = sqrt(1 / fan_in)`.
    ConvWeight { fan_in: usize },
    /// Zero-initialized additive term (conv and norm biases).
    Bias,
    /// Multiplicative normalization gain, initialized to one.
    Gain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Shape,
    pub kind: ParamKind,
}

/// Parameters keyed by canonical dotted name, e.g. `mai.stage2.aspp.branch0.weight`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Option<Tensor> {
        self.tensors.insert(name.into(), value)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors.get(name).ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.tensors.remove(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Replaces the named tensor with zeros of the same shape.
    pub fn zero(&mut self, name: &str) -> Result<()> {
        let t = self.tensors.get_mut(name).ok_or_else(|| Error::MissingParameter(name.to_string()))?;
        *t = Tensor::zeros(t.shape());
        Ok(())
    }

    /// Zeroes every parameter whose name starts with `prefix`.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (name, t) in self.tensors.iter_mut() {
            if name.starts_with(prefix) {
                *t = Tensor::zeros(t.shape());
            }
        }
    }

    /// Checks that every spec is present with the declared shape.
    pub fn validate(&self, specs: &[ParamSpec]) -> Result<()> {
        for spec in specs {
            let t = self.get(&spec.name)?;
            if t.shape() != spec.shape {
                return Err(Error::ParameterShape {
                    name: spec.name.clone(),
                    expected: spec.shape.to_string(),
                    found: t.shape().to_string(),
                });
            }
        }
        Ok(())
    }

    /// Subset restricted to the given specs.
    pub fn select(&self, specs: &[ParamSpec]) -> Result<ParamSet> {
        let mut out = ParamSet::new();
        for spec in specs {
            out.insert(spec.name.clone(), self.get(&spec.name)?.clone());
        }
        Ok(out)
    }

    pub fn extend(&mut self, other: ParamSet) {
        self.tensors.extend(other.tensors);
    }
}

/// Seeded initialization of every spec.
///
/// Each parameter draws from its own ChaCha8 stream keyed by `seed` and the
/// parameter name, so adding a parameter never perturbs the others.
pub fn init_params(specs: &[ParamSpec], seed: u64) -> ParamSet {
    let mut set = ParamSet::new();
    for spec in specs {
        let tensor = match spec.kind {
            ParamKind::ConvWeight { fan_in } => {
                let bound = (1.0 / fan_in as f64).sqrt();
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name_hash(&spec.name));
                let data = (0..spec.shape.numel()).map(|_| rng.gen_range(-bound..bound)).collect();
                Tensor::from_parts(spec.shape, data)
            }
            ParamKind::Bias => Tensor::zeros(spec.shape),
            ParamKind::Gain => Tensor::full(spec.shape, 1.0),
        };
        set.insert(spec.name.clone(), tensor);
    }
    set
}

/// Perturbs every parameter (including biases and gains) with seeded uniform
/// noise in `[-scale, scale)`. Used to exercise all parameter paths in tests
/// and gradient checks.
pub fn jitter_params(params: &ParamSet, scale: f64, seed: u64) -> ParamSet {
    let mut out = ParamSet::new();
    for (name, t) in params.iter() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name_hash(name) ^ 0x9e37_79b9_7f4a_7c15);
        let data = t.data().iter().map(|v| v + rng.gen_range(-scale..scale)).collect();
        out.insert(name, Tensor::from_parts(t.shape(), data));
    }
    out
}

/// 64-bit FNV-1a.
fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Parameter handles registered on a tape.
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn bind(tape: &mut Tape, params: &ParamSet) -> Self {
        let vars = params.iter().map(|(name, t)| (name.to_string(), tape.leaf(t.clone()))).collect();
        BoundParams { vars }
    }

    /// Handles that already live on a tape, e.g. leaves of a gradient check.
    pub fn from_vars(pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        BoundParams { vars: pairs.into_iter().collect() }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

/// A convolution with bias whose parameters live at `<prefix>.weight` and
/// `<prefix>.bias`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayer {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub geometry: ConvGeometry,
}

impl ConvLayer {
    pub fn pointwise(c_in: usize, c_out: usize) -> Self {
        ConvLayer { c_in, c_out, kernel: 1, geometry: ConvGeometry::default() }
    }

    /// Same-spatial `kernel x kernel` convolution (`padding = dilation * (k - 1) / 2`).
    pub fn same(c_in: usize, c_out: usize, kernel: usize, dilation: usize) -> Self {
        ConvLayer { c_in, c_out, kernel, geometry: ConvGeometry::same(kernel, dilation) }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.geometry.groups = groups;
        self
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(self.c_out, self.c_in / self.geometry.groups, self.kernel, self.kernel)
    }

    pub fn specs(&self, prefix: &str) -> Vec<ParamSpec> {
        let fan_in = self.c_in / self.geometry.groups * self.kernel * self.kernel;
        vec![
            ParamSpec {
                name: format!("{prefix}.weight"),
                shape: self.weight_shape(),
                kind: ParamKind::ConvWeight { fan_in },
            },
            ParamSpec { name: format!("{prefix}.bias"), shape: Shape::new(1, self.c_out, 1, 1), kind: ParamKind::Bias },
        ]
    }

    pub fn apply(&self, tape: &mut Tape, params: &BoundParams, prefix: &str, x: Var) -> Result<Var> {
        let w = params.get(&format!("{prefix}.weight"))?;
        let b = params.get(&format!("{prefix}.bias"))?;
        tape.conv2d(x, w, Some(b), self.geometry)
    }
}

//! Recording tape over the primitive kernels.
//!
//! Blocks are written once against [`Tape`] and run in one of three modes:
//! recording (keeps a backward closure per node for [`Tape::backward`]),
//! inference (values only) and probing (values plus a fingerprint of every
//! piecewise branch taken, so finite-difference probes that cross a ReLU
//! kink or change a max selection can be detected).

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use crate::error::{Error, Result};
use crate::ops::{self, pointwise, pool, reassemble, resample, ConvGeometry, PoolKind, UpsampleMode};
use crate::tensor::{Axis, Shape, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

type Backward = Box<dyn Fn(&Tensor) -> Vec<Tensor>>;

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    backward: Option<Backward>,
}

pub struct Tape {
    record: bool,
    branches: Option<DefaultHasher>,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::recording()
    }
}

impl Tape {
    pub fn recording() -> Self {
        Tape { record: true, branches: None, nodes: Vec::new() }
    }

    pub fn inference() -> Self {
        Tape { record: false, branches: None, nodes: Vec::new() }
    }

    pub fn probing() -> Self {
        Tape { record: false, branches: Some(DefaultHasher::new()), nodes: Vec::new() }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    /// Fingerprint of all branch decisions so far (0 when not probing).
    pub fn branch_signature(&self) -> u64 {
        self.branches.as_ref().map_or(0, |h| h.finish())
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Vec::new(), None)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, parents: Vec<usize>, backward: Option<Backward>) -> Var {
        let (parents, backward) = if self.record { (parents, backward) } else { (Vec::new(), None) };
        self.nodes.push(Node { value, parents, backward });
        Var(self.nodes.len() - 1)
    }

    fn note_branch(&mut self, bits: impl Iterator<Item = u64>) {
        if let Some(h) = self.branches.as_mut() {
            h.write_usize(self.nodes.len());
            for b in bits {
                h.write_u64(b);
            }
        }
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, g: ConvGeometry) -> Result<Var> {
        let xv = self.value(x).clone();
        let wv = self.value(w).clone();
        let bv = b.map(|b| self.value(b).clone());
        let y = ops::conv2d_forward(&xv, &wv, bv.as_ref(), g)?;
        let mut parents = vec![x.0, w.0];
        if let Some(b) = b {
            parents.push(b.0);
        }
        let bias_shape = bv.map(|t| t.shape());
        let back: Backward = Box::new(move |gy| {
            let grads = ops::conv2d_backward(&xv, &wv, g, gy).expect("checked in forward");
            let mut out = vec![grads.input, grads.weight];
            if let Some(bs) = bias_shape {
                out.push(grads.bias.reshape(bs).expect("bias element count"));
            }
            out
        });
        Ok(self.push(y, parents, Some(back)))
    }

    pub fn maxpool2d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let xs = self.shape(x);
        let res = pool::maxpool2d_with_indices(self.value(x), kernel, stride)?;
        self.note_branch(res.argmax.iter().map(|&i| i as u64));
        let argmax = res.argmax;
        let back: Backward = Box::new(move |gy| vec![pool::scatter_argmax(xs, &argmax, gy)]);
        Ok(self.push(res.output, vec![x.0], Some(back)))
    }

    pub fn upsample(&mut self, x: Var, factor: usize, mode: UpsampleMode) -> Result<Var> {
        let xs = self.shape(x);
        let y = resample::upsample(self.value(x), factor, mode)?;
        let back: Backward = Box::new(move |gy| vec![resample::upsample_backward(xs, factor, mode, gy)]);
        Ok(self.push(y, vec![x.0], Some(back)))
    }

    pub fn softmax(&mut self, x: Var, axis: Axis) -> Var {
        let y = pointwise::softmax_axis(self.value(x), axis);
        let yc = y.clone();
        let back: Backward = Box::new(move |gy| vec![pointwise::softmax_backward(&yc, axis, gy)]);
        self.push(y, vec![x.0], Some(back))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = pointwise::elementwise(self.value(x), pointwise::Activation::Sigmoid);
        let yc = y.clone();
        let back: Backward = Box::new(move |gy| vec![pointwise::sigmoid_backward(&yc, gy)]);
        self.push(y, vec![x.0], Some(back))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x).clone();
        if self.branches.is_some() {
            let words: Vec<u64> = xv
                .data()
                .chunks(64)
                .map(|c| c.iter().enumerate().fold(0u64, |m, (i, &v)| m | (((v > 0.0) as u64) << i)))
                .collect();
            self.note_branch(words.into_iter());
        }
        let y = pointwise::elementwise(&xv, pointwise::Activation::Relu);
        let back: Backward = Box::new(move |gy| vec![pointwise::relu_backward(&xv, gy)]);
        self.push(y, vec![x.0], Some(back))
    }

    pub fn layernorm(&mut self, x: Var) -> Var {
        let (y, inv_std) = pointwise::layernorm_with_stats(self.value(x));
        let yc = y.clone();
        let back: Backward = Box::new(move |gy| vec![pointwise::layernorm_backward(&yc, &inv_std, gy)]);
        self.push(y, vec![x.0], Some(back))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        let y = ops::matmul_batched(&av, &bv)?;
        let back: Backward = Box::new(move |gy| {
            let ga = ops::matmul_batched(gy, &ops::transpose(&bv)).expect("checked");
            let gb = ops::matmul_batched(&ops::transpose(&av), gy).expect("checked");
            vec![ga, gb]
        });
        Ok(self.push(y, vec![a.0, b.0], Some(back)))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let y = ops::transpose(self.value(x));
        let back: Backward = Box::new(|gy| vec![ops::transpose(gy)]);
        self.push(y, vec![x.0], Some(back))
    }

    pub fn reshape(&mut self, x: Var, shape: Shape) -> Result<Var> {
        let xs = self.shape(x);
        let y = self.value(x).reshape(shape)?;
        let back: Backward = Box::new(move |gy| vec![gy.reshape(xs).expect("same size")]);
        Ok(self.push(y, vec![x.0], Some(back)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let y = pointwise::add(self.value(a), self.value(b))?;
        let back: Backward = Box::new(move |gy| vec![pointwise::reduce_to(gy, sa), pointwise::reduce_to(gy, sb)]);
        Ok(self.push(y, vec![a.0, b.0], Some(back)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        let y = pointwise::mul(&av, &bv)?;
        let back: Backward = Box::new(move |gy| {
            vec![pointwise::mul_backward(gy, &bv, av.shape()), pointwise::mul_backward(gy, &av, bv.shape())]
        });
        Ok(self.push(y, vec![a.0, b.0], Some(back)))
    }

    pub fn div_scalar(&mut self, x: Var, divisor: f64) -> Var {
        let y = self.value(x).map(|v| v / divisor);
        let back: Backward = Box::new(move |gy| vec![gy.map(|g| g / divisor)]);
        self.push(y, vec![x.0], Some(back))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let y = ops::concat_channels(&values)?;
        let widths: Vec<usize> = values.iter().map(|t| t.shape().c()).collect();
        let back: Backward = Box::new(move |gy| {
            let mut start = 0;
            widths
                .iter()
                .map(|&w| {
                    let part = gy.narrow_channels(start, w).expect("in range");
                    start += w;
                    part
                })
                .collect()
        });
        Ok(self.push(y, parts.iter().map(|p| p.0).collect(), Some(back)))
    }

    pub fn permute_channels(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let y = ops::permute_channels(self.value(x), perm)?;
        let inverse = ops::invert_permutation(perm);
        let back: Backward = Box::new(move |gy| vec![ops::permute_channels(gy, &inverse).expect("valid")]);
        Ok(self.push(y, vec![x.0], Some(back)))
    }

    pub fn channel_shuffle(&mut self, x: Var, groups: usize) -> Result<Var> {
        let perm = ops::shuffle_permutation(self.shape(x).c(), groups)?;
        self.permute_channels(x, &perm)
    }

    pub fn pixel_shuffle(&mut self, x: Var, factor: usize) -> Result<Var> {
        let y = ops::pixel_shuffle(self.value(x), factor)?;
        let back: Backward = Box::new(move |gy| vec![ops::pixel_unshuffle(gy, factor).expect("valid")]);
        Ok(self.push(y, vec![x.0], Some(back)))
    }

    pub fn mean_axis(&mut self, x: Var, axis: Axis) -> Var {
        let xs = self.shape(x);
        let y = pool::mean_axis(self.value(x), axis);
        let back: Backward = Box::new(move |gy| vec![pool::mean_axis_backward(xs, axis, gy)]);
        self.push(y, vec![x.0], Some(back))
    }

    pub fn max_axis(&mut self, x: Var, axis: Axis) -> Var {
        let xs = self.shape(x);
        let (y, arg) = pool::max_axis(self.value(x), axis);
        self.note_branch(arg.iter().map(|&i| i as u64));
        let back: Backward = Box::new(move |gy| vec![pool::scatter_argmax(xs, &arg, gy)]);
        self.push(y, vec![x.0], Some(back))
    }

    /// Pools every `(n, c)` plane down to `(N, C, 1, 1)`.
    pub fn global_pool(&mut self, x: Var, kind: PoolKind) -> Result<Var> {
        let s = self.shape(x);
        let flat = self.reshape(x, Shape::new(s.n(), s.c(), 1, s.plane()))?;
        Ok(match kind {
            PoolKind::Avg => self.mean_axis(flat, Axis::W),
            PoolKind::Max => self.max_axis(flat, Axis::W),
        })
    }

    pub fn reassemble(&mut self, x: Var, kernels: Var, k: usize, factor: usize) -> Result<Var> {
        let xv = self.value(x).clone();
        let kv = self.value(kernels).clone();
        let y = reassemble::reassemble(&xv, &kv, k, factor)?;
        let back: Backward = Box::new(move |gy| {
            let (gx, gk) = reassemble::reassemble_backward(&xv, &kv, k, factor, gy).expect("checked");
            vec![gx, gk]
        });
        Ok(self.push(y, vec![x.0, kernels.0], Some(back)))
    }

    /// Reverse sweep from the given `(output, cotangent)` seeds.
    pub fn backward(&self, seeds: &[(Var, Tensor)]) -> Result<Gradients> {
        if !self.record {
            return Err(Error::InvalidArgument("backward called on a tape that did not record".into()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for (v, seed) in seeds {
            if seed.shape() != self.shape(*v) {
                return Err(Error::InvalidArgument(format!(
                    "cotangent shape {} does not match output {}",
                    seed.shape(),
                    self.shape(*v)
                )));
            }
            accumulate(&mut grads[v.0], seed.clone());
        }
        for idx in (0..self.nodes.len()).rev() {
            let node = &self.nodes[idx];
            let Some(back) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let parent_grads = back(&g);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                accumulate(&mut grads[p], pg);
            }
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    *slot = Some(match slot.take() {
        None => g,
        Some(prev) => prev.zip_map(&g, |a, b| a + b).expect("gradient shapes agree"),
    });
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Shape>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` does not influence the seeded outputs.
    pub fn get(&self, v: Var) -> Tensor {
        self.grads[v.0].clone().unwrap_or_else(|| Tensor::zeros(self.shapes[v.0]))
    }
}

use crate::error::{Error, Result};
use crate::tensor::{Axis, Shape, Tensor};

/// Max pooling result together with the flat input index chosen for every
/// output element (first maximum in row-major window order).
pub struct MaxPoolOutput {
    pub output: Tensor,
    pub argmax: Vec<usize>,
}

pub fn maxpool2d(input: &Tensor, kernel: usize, stride: usize) -> Result<Tensor> {
    Ok(maxpool2d_with_indices(input, kernel, stride)?.output)
}

pub fn maxpool2d_with_indices(input: &Tensor, kernel: usize, stride: usize) -> Result<MaxPoolOutput> {
    if kernel == 0 || stride == 0 {
        return Err(Error::InvalidArgument("maxpool2d: kernel and stride must be positive".into()));
    }
    let s = input.shape();
    let mut out_extent = [0usize; 2];
    for (slot, axis) in out_extent.iter_mut().zip([Axis::H, Axis::W]) {
        let extent = s.dim(axis);
        if extent < kernel || !(extent - kernel).is_multiple_of(stride) {
            return Err(Error::shape(
                "maxpool2d",
                axis,
                format!("extent {extent} does not tile with kernel {kernel} stride {stride}"),
            ));
        }
        *slot = (extent - kernel) / stride + 1;
    }
    let [oh, ow] = out_extent;
    let os = Shape::new(s.n(), s.c(), oh, ow);
    let (ih, iw) = (s.h(), s.w());
    let x = input.data();
    let mut out = Vec::with_capacity(os.numel());
    let mut argmax = Vec::with_capacity(os.numel());
    for plane in 0..s.n() * s.c() {
        let base = plane * ih * iw;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = base + oy * stride * iw + ox * stride;
                let mut best = x[best_idx];
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let idx = base + (oy * stride + ky) * iw + ox * stride + kx;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok(MaxPoolOutput { output: Tensor::from_parts(os, out), argmax })
}

/// Routes each output gradient to the input element that produced the max.
pub fn scatter_argmax(input_shape: Shape, argmax: &[usize], grad: &Tensor) -> Tensor {
    let mut gx = vec![0.0; input_shape.numel()];
    for (&idx, &g) in argmax.iter().zip(grad.data()) {
        gx[idx] += g;
    }
    Tensor::from_parts(input_shape, gx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Avg,
    Max,
}

/// Reduction along one axis, keeping it with extent 1.
pub fn mean_axis(input: &Tensor, axis: Axis) -> Tensor {
    let (outer, len, inner) = split_axis(input.shape(), axis);
    let x = input.data();
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for i in 0..inner {
            let mut acc = 0.0;
            for k in 0..len {
                acc += x[(o * len + k) * inner + i];
            }
            out[o * inner + i] = acc / len as f64;
        }
    }
    Tensor::from_parts(input.shape().with(axis, 1), out)
}

pub fn mean_axis_backward(input_shape: Shape, axis: Axis, grad: &Tensor) -> Tensor {
    let (outer, len, inner) = split_axis(input_shape, axis);
    let g = grad.data();
    let mut gx = vec![0.0; input_shape.numel()];
    for o in 0..outer {
        for k in 0..len {
            for i in 0..inner {
                gx[(o * len + k) * inner + i] = g[o * inner + i] / len as f64;
            }
        }
    }
    Tensor::from_parts(input_shape, gx)
}

/// Max along one axis, keeping it with extent 1; also returns flat argmax indices.
pub fn max_axis(input: &Tensor, axis: Axis) -> (Tensor, Vec<usize>) {
    let (outer, len, inner) = split_axis(input.shape(), axis);
    let x = input.data();
    let mut out = vec![0.0; outer * inner];
    let mut arg = vec![0; outer * inner];
    for o in 0..outer {
        for i in 0..inner {
            let mut best_idx = o * len * inner + i;
            for k in 1..len {
                let idx = (o * len + k) * inner + i;
                if x[idx] > x[best_idx] {
                    best_idx = idx;
                }
            }
            out[o * inner + i] = x[best_idx];
            arg[o * inner + i] = best_idx;
        }
    }
    (Tensor::from_parts(input.shape().with(axis, 1), out), arg)
}

/// Global average or max pooling to shape `(N, C, 1, 1)`.
pub fn global_pool(input: &Tensor, kind: PoolKind) -> Tensor {
    let s = input.shape();
    let flat = input.reshape(Shape::new(s.n(), s.c(), 1, s.plane())).expect("same element count");
    match kind {
        PoolKind::Avg => mean_axis(&flat, Axis::W),
        PoolKind::Max => max_axis(&flat, Axis::W).0,
    }
}

/// `(outer, len, inner)` decomposition of a row-major shape around `axis`.
pub(crate) fn split_axis(shape: Shape, axis: Axis) -> (usize, usize, usize) {
    let i = axis.index();
    let outer: usize = shape.0[..i].iter().product();
    let inner: usize = shape.0[i + 1..].iter().product();
    (outer, shape.0[i], inner)
}

//! Activations, normalizations and broadcasting arithmetic.

use crate::error::{Error, Result};
use crate::ops::pool::split_axis;
use crate::tensor::{Axis, Shape, Tensor};

pub const LAYERNORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Relu,
}

fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn elementwise(input: &Tensor, kind: Activation) -> Tensor {
    match kind {
        Activation::Sigmoid => input.map(sigmoid_scalar),
        Activation::Relu => input.map(|v| if v > 0.0 { v } else { 0.0 }),
    }
}

pub fn sigmoid_backward(output: &Tensor, grad: &Tensor) -> Tensor {
    output.zip_map(grad, |y, g| g * y * (1.0 - y)).expect("shapes agree")
}

pub fn relu_backward(input: &Tensor, grad: &Tensor) -> Tensor {
    input.zip_map(grad, |x, g| if x > 0.0 { g } else { 0.0 }).expect("shapes agree")
}

/// Softmax over every slice along `axis`, stabilized by max subtraction.
pub fn softmax_axis(input: &Tensor, axis: Axis) -> Tensor {
    let (outer, len, inner) = split_axis(input.shape(), axis);
    let x = input.data();
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let max = (0..len).map(|k| x[at(k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for k in 0..len {
                let e = (x[at(k)] - max).exp();
                out[at(k)] = e;
                total += e;
            }
            for k in 0..len {
                out[at(k)] /= total;
            }
        }
    }
    Tensor::from_parts(input.shape(), out)
}

pub fn softmax_backward(output: &Tensor, axis: Axis, grad: &Tensor) -> Tensor {
    let (outer, len, inner) = split_axis(output.shape(), axis);
    let y = output.data();
    let g = grad.data();
    let mut gx = vec![0.0; y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let dot: f64 = (0..len).map(|k| y[at(k)] * g[at(k)]).sum();
            for k in 0..len {
                gx[at(k)] = y[at(k)] * (g[at(k)] - dot);
            }
        }
    }
    Tensor::from_parts(output.shape(), gx)
}

/// Per-instance normalization over the whole `(C, H, W)` slice, no affine.
pub fn layernorm(input: &Tensor) -> Tensor {
    layernorm_with_stats(input).0
}

/// Normalized output plus the per-instance inverse standard deviation.
pub fn layernorm_with_stats(input: &Tensor) -> (Tensor, Vec<f64>) {
    let s = input.shape();
    let m = s.c() * s.plane();
    let mut out = Vec::with_capacity(input.numel());
    let mut inv_std = Vec::with_capacity(s.n());
    for slice in input.data().chunks(m.max(1)) {
        let mean = slice.iter().sum::<f64>() / m as f64;
        let var = slice.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
        let r = 1.0 / (var + LAYERNORM_EPS).sqrt();
        out.extend(slice.iter().map(|v| (v - mean) * r));
        inv_std.push(r);
    }
    (Tensor::from_parts(s, out), inv_std)
}

pub fn layernorm_backward(output: &Tensor, inv_std: &[f64], grad: &Tensor) -> Tensor {
    let s = output.shape();
    let m = (s.c() * s.plane()).max(1);
    let mut gx = Vec::with_capacity(output.numel());
    for ((y, g), r) in output.data().chunks(m).zip(grad.data().chunks(m)).zip(inv_std) {
        let mean_g = g.iter().sum::<f64>() / m as f64;
        let mean_gy = g.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / m as f64;
        gx.extend(g.iter().zip(y).map(|(gi, yi)| r * (gi - mean_g - yi * mean_gy)));
    }
    Tensor::from_parts(s, gx)
}

/// Result shape of broadcasting `a` against `b`: each axis must agree or be 1.
pub fn broadcast_shape(op: &'static str, a: Shape, b: Shape) -> Result<Shape> {
    let mut out = [0; 4];
    for axis in Axis::ALL {
        let (x, y) = (a.dim(axis), b.dim(axis));
        out[axis.index()] = if x == y || y == 1 {
            x
        } else if x == 1 {
            y
        } else {
            return Err(Error::shape(op, axis, format!("cannot broadcast {a} against {b}")));
        };
    }
    Ok(Shape(out))
}

fn broadcast_index(shape: Shape, idx: [usize; 4]) -> usize {
    let st = shape.strides();
    (0..4).map(|k| if shape.0[k] == 1 { 0 } else { idx[k] * st[k] }).sum()
}

fn for_each_index(shape: Shape, mut f: impl FnMut(usize, [usize; 4])) {
    let [n, c, h, w] = shape.0;
    let mut flat = 0;
    for i0 in 0..n {
        for i1 in 0..c {
            for i2 in 0..h {
                for i3 in 0..w {
                    f(flat, [i0, i1, i2, i3]);
                    flat += 1;
                }
            }
        }
    }
}

fn broadcast_binary(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let os = broadcast_shape(op, a.shape(), b.shape())?;
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; os.numel()];
    for_each_index(os, |flat, idx| {
        out[flat] = f(ad[broadcast_index(a.shape(), idx)], bd[broadcast_index(b.shape(), idx)]);
    });
    Ok(Tensor::from_parts(os, out))
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    broadcast_binary("add", a, b, |x, y| x + y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    broadcast_binary("mul", a, b, |x, y| x * y)
}

/// Sums a broadcast-shaped gradient back down to `target`.
pub fn reduce_to(grad: &Tensor, target: Shape) -> Tensor {
    if grad.shape() == target {
        return grad.clone();
    }
    let g = grad.data();
    let mut out = vec![0.0; target.numel()];
    for_each_index(grad.shape(), |flat, idx| {
        out[broadcast_index(target, idx)] += g[flat];
    });
    Tensor::from_parts(target, out)
}

/// `grad * other`, broadcast to the output shape, then reduced to `target`.
pub fn mul_backward(grad: &Tensor, other: &Tensor, target: Shape) -> Tensor {
    let full = mul(grad, other).expect("broadcast-compatible by construction");
    reduce_to(&full, target)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_reference_values() {
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![1.0, 2.0, 3.0]).unwrap();
        let y = softmax_axis(&x, Axis::W);
        let expected = [0.09003057317038046, 0.24472847105479764, 0.6652409557748219];
        for (a, b) in y.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_saturates_without_overflow() {
        let x = Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![1000.0, 0.0]).unwrap();
        let y = softmax_axis(&x, Axis::C);
        assert!((y.data()[0] - 1.0).abs() < 1e-12);
        assert!(y.data()[1].abs() < 1e-12);
    }

    #[test]
    fn softmax_uniform_slice() {
        let x = Tensor::full(Shape::new(1, 1, 5, 1), 3.0);
        let y = softmax_axis(&x, Axis::H);
        assert!(y.data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn sigmoid_symmetry_point() {
        let x = Tensor::zeros(Shape::new(1, 1, 1, 1));
        assert_eq!(elementwise(&x, Activation::Sigmoid).data(), &[0.5]);
    }

    #[test]
    fn layernorm_moments() {
        let x = Tensor::uniform(Shape::new(3, 4, 2, 5), -3.0, 7.0, 11);
        let y = layernorm(&x);
        for slice in y.data().chunks(40) {
            let mean = slice.iter().sum::<f64>() / 40.0;
            let var = slice.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 40.0;
            assert!(mean.abs() < 1e-12);
            // (x - mu)^2 / (var + eps) averages to var / (var + eps).
            assert!((var - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn broadcast_mul_and_reduce() {
        let a = Tensor::uniform(Shape::new(2, 3, 4, 4), -1.0, 1.0, 5);
        let b = Tensor::from_vec(Shape::new(2, 3, 1, 1), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = mul(&a, &b).unwrap();
        assert_eq!(y.at(1, 2, 3, 1), a.at(1, 2, 3, 1) * 6.0);
        let r = reduce_to(&Tensor::full(Shape::new(2, 3, 4, 4), 1.0), b.shape());
        assert!(r.data().iter().all(|&v| v == 16.0));
        assert!(add(&a, &Tensor::zeros(Shape::new(1, 2, 1, 1))).is_err());
    }
}

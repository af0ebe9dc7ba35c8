//! Content-aware reassembly: every upsampled output pixel is a weighted sum
//! over the `k x k` neighborhood of its source pixel, with one predicted
//! kernel per output pixel.
//!
//! The sum is evaluated as `center + sum_t w_t * (x_t - center)`, which is
//! the plain weighted sum whenever the kernel sums to one, and leaves
//! constant neighborhoods bit-exact. Out-of-range taps read zero.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Axis, Shape, Tensor};

fn check(input: Shape, kernels: Shape, k: usize, factor: usize) -> Result<Shape> {
    const OP: &str = "reassemble";
    if k.is_multiple_of(2) || factor == 0 {
        return Err(Error::InvalidArgument(format!(
            "reassemble: kernel size must be odd and factor positive (k={k}, factor={factor})"
        )));
    }
    if kernels.n() != input.n() {
        return Err(Error::shape(OP, Axis::N, format!("{kernels} vs {input}")));
    }
    if kernels.c() != k * k {
        return Err(Error::shape(OP, Axis::C, format!("kernels carry {} taps, expected {}", kernels.c(), k * k)));
    }
    for axis in [Axis::H, Axis::W] {
        if kernels.dim(axis) != input.dim(axis) * factor {
            return Err(Error::shape(OP, axis, format!("kernel map {kernels} is not {factor}x input {input}")));
        }
    }
    Ok(Shape::new(input.n(), input.c(), kernels.h(), kernels.w()))
}

pub fn reassemble(input: &Tensor, kernels: &Tensor, k: usize, factor: usize) -> Result<Tensor> {
    let s = input.shape();
    let os = check(s, kernels.shape(), k, factor)?;
    let r = (k / 2) as isize;
    let (ih, iw, oh, ow) = (s.h() as isize, s.w() as isize, os.h(), os.w());
    let kd = kernels.data();
    let mut out = vec![0.0; os.numel()];
    out.par_chunks_mut(oh * ow).enumerate().for_each(|(plane_idx, plane)| {
        let n = plane_idx / s.c();
        let c = plane_idx % s.c();
        let xp = input.plane(n, c);
        let kbase = n * k * k * oh * ow;
        for oy in 0..oh {
            let sy = (oy / factor) as isize;
            for ox in 0..ow {
                let sx = (ox / factor) as isize;
                let center = xp[(sy * iw + sx) as usize];
                let mut acc = 0.0;
                for a in 0..k as isize {
                    let y = sy + a - r;
                    for b in 0..k as isize {
                        let x = sx + b - r;
                        let v = if y >= 0 && y < ih && x >= 0 && x < iw { xp[(y * iw + x) as usize] } else { 0.0 };
                        let t = (a * k as isize + b) as usize;
                        acc += kd[kbase + (t * oh + oy) * ow + ox] * (v - center);
                    }
                }
                plane[oy * ow + ox] = center + acc;
            }
        }
    });
    Ok(Tensor::from_parts(os, out))
}

/// Gradients with respect to the input and the kernel map.
pub fn reassemble_backward(
    input: &Tensor,
    kernels: &Tensor,
    k: usize,
    factor: usize,
    grad: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let s = input.shape();
    let ks = kernels.shape();
    let os = check(s, ks, k, factor)?;
    let r = (k / 2) as isize;
    let (ih, iw, oh, ow) = (s.h() as isize, s.w() as isize, os.h(), os.w());
    let kd = kernels.data();
    let g = grad.data();
    let mut gx = vec![0.0; s.numel()];
    let mut gk = vec![0.0; ks.numel()];
    let taps = k * k;
    for n in 0..s.n() {
        let kbase = n * taps * oh * ow;
        for c in 0..s.c() {
            let xp = input.plane(n, c);
            let gxbase = (n * s.c() + c) * s.plane();
            let gbase = (n * s.c() + c) * oh * ow;
            for oy in 0..oh {
                let sy = (oy / factor) as isize;
                for ox in 0..ow {
                    let sx = (ox / factor) as isize;
                    let gv = g[gbase + oy * ow + ox];
                    let ci = (sy * iw + sx) as usize;
                    let center = xp[ci];
                    let mut weight_total = 0.0;
                    for a in 0..k as isize {
                        let y = sy + a - r;
                        for b in 0..k as isize {
                            let x = sx + b - r;
                            let t = (a * k as isize + b) as usize;
                            let ki = kbase + (t * oh + oy) * ow + ox;
                            let wv = kd[ki];
                            weight_total += wv;
                            let v = if y >= 0 && y < ih && x >= 0 && x < iw {
                                let idx = (y * iw + x) as usize;
                                gx[gxbase + idx] += gv * wv;
                                xp[idx]
                            } else {
                                0.0
                            };
                            gk[ki] += gv * (v - center);
                        }
                    }
                    gx[gxbase + ci] += gv * (1.0 - weight_total);
                }
            }
        }
    }
    Ok((Tensor::from_parts(s, gx), Tensor::from_parts(ks, gk)))
}

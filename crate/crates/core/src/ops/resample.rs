//! Integer-factor upsampling.
//!
//! Bilinear sampling uses the half-pixel convention: output index `i` reads
//! source coordinate `(i + 0.5) / factor - 0.5`, clamped into the input.
//! Interpolation is written as `a + t * (b - a)` so constant inputs map to
//! bit-identical constant outputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpsampleMode {
    Nearest,
    Bilinear,
}

#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    t: f64,
}

fn bilinear_taps(input: usize, factor: usize) -> Vec<Tap> {
    (0..input * factor)
        .map(|i| {
            let src = ((i as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            Tap { lo, hi, t: src - lo as f64 }
        })
        .collect()
}

fn check(input: &Tensor, factor: usize) -> Result<Shape> {
    if factor < 1 {
        return Err(Error::InvalidArgument(format!("upsample: factor must be at least 1, got {factor}")));
    }
    let s = input.shape();
    if s.h() == 0 || s.w() == 0 {
        return Err(Error::InvalidArgument("upsample: empty spatial extent".into()));
    }
    Ok(Shape::new(s.n(), s.c(), s.h() * factor, s.w() * factor))
}

pub fn upsample(input: &Tensor, factor: usize, mode: UpsampleMode) -> Result<Tensor> {
    let os = check(input, factor)?;
    let s = input.shape();
    let (ih, iw, oh, ow) = (s.h(), s.w(), os.h(), os.w());
    let x = input.data();
    let mut out = Vec::with_capacity(os.numel());
    match mode {
        UpsampleMode::Nearest => {
            for plane in x.chunks(ih * iw) {
                for oy in 0..oh {
                    let row = &plane[(oy / factor) * iw..][..iw];
                    out.extend((0..ow).map(|ox| row[ox / factor]));
                }
            }
        }
        UpsampleMode::Bilinear => {
            let ty = bilinear_taps(ih, factor);
            let tx = bilinear_taps(iw, factor);
            for plane in x.chunks(ih * iw) {
                for y in &ty {
                    let r0 = &plane[y.lo * iw..][..iw];
                    let r1 = &plane[y.hi * iw..][..iw];
                    for x in &tx {
                        let top = r0[x.lo] + x.t * (r0[x.hi] - r0[x.lo]);
                        let bottom = r1[x.lo] + x.t * (r1[x.hi] - r1[x.lo]);
                        out.push(top + y.t * (bottom - top));
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(os, out))
}

/// Transpose of [`upsample`] applied to an output gradient.
pub fn upsample_backward(input_shape: Shape, factor: usize, mode: UpsampleMode, grad: &Tensor) -> Tensor {
    let (ih, iw) = (input_shape.h(), input_shape.w());
    let (oh, ow) = (ih * factor, iw * factor);
    let g = grad.data();
    let mut gx = vec![0.0; input_shape.numel()];
    let ty = bilinear_taps(ih, factor);
    let tx = bilinear_taps(iw, factor);
    for (gplane, gxp) in g.chunks(oh * ow).zip(gx.chunks_mut(ih * iw)) {
        for oy in 0..oh {
            for ox in 0..ow {
                let gv = gplane[oy * ow + ox];
                match mode {
                    UpsampleMode::Nearest => gxp[(oy / factor) * iw + ox / factor] += gv,
                    UpsampleMode::Bilinear => {
                        let (y, x) = (ty[oy], tx[ox]);
                        let (wy1, wx1) = (y.t, x.t);
                        let (wy0, wx0) = (1.0 - y.t, 1.0 - x.t);
                        gxp[y.lo * iw + x.lo] += gv * wy0 * wx0;
                        gxp[y.lo * iw + x.hi] += gv * wy0 * wx1;
                        gxp[y.hi * iw + x.lo] += gv * wy1 * wx0;
                        gxp[y.hi * iw + x.hi] += gv * wy1 * wx1;
                    }
                }
            }
        }
    }
    Tensor::from_parts(input_shape, gx)
}

//! Direct 2-D convolution with stride, dilation, grouping and zero padding.
//!
//! Each output element accumulates bias first, then taps in (input channel,
//! kernel row, kernel column) order. Work is split over output planes only,
//! so results do not depend on the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Axis, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub stride: usize,
    pub dilation: usize,
    pub groups: usize,
    pub padding: usize,
}

impl Default for ConvGeometry {
    fn default() -> Self {
        ConvGeometry { stride: 1, dilation: 1, groups: 1, padding: 0 }
    }
}

impl ConvGeometry {
    /// Stride-1 geometry whose output keeps the input's spatial extents
    /// for an odd `kernel`.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        ConvGeometry { stride: 1, dilation, groups: 1, padding: dilation * (kernel - 1) / 2 }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    fn output_extent(&self, input: usize, kernel: usize) -> usize {
        let reach = (kernel - 1) * self.dilation + 1;
        (input + 2 * self.padding - reach) / self.stride + 1
    }
}

/// Weights, optional bias and geometry of one convolution.
#[derive(Debug, Clone)]
pub struct ConvParams {
    /// Shape `(C_out, C_in / groups, kH, kW)`.
    pub weight: Tensor,
    /// `C_out` values in any shape, typically `(1, C_out, 1, 1)`.
    pub bias: Option<Tensor>,
    pub geometry: ConvGeometry,
}

pub fn conv2d(input: &Tensor, params: &ConvParams) -> Result<Tensor> {
    conv2d_forward(input, &params.weight, params.bias.as_ref(), params.geometry)
}

pub(crate) fn check_conv(x: Shape, w: Shape, bias: Option<&Tensor>, g: ConvGeometry) -> Result<Shape> {
    const OP: &str = "conv2d";
    if g.stride == 0 || g.dilation == 0 || g.groups == 0 {
        return Err(Error::InvalidArgument(format!("conv2d: stride, dilation and groups must be positive, got {g:?}")));
    }
    let c_out = w.dim(Axis::N);
    if !x.c().is_multiple_of(g.groups) {
        return Err(Error::divisibility(OP, format!("{} input channels not divisible by {} groups", x.c(), g.groups)));
    }
    if !c_out.is_multiple_of(g.groups) {
        return Err(Error::divisibility(OP, format!("{c_out} output channels not divisible by {} groups", g.groups)));
    }
    if w.c() * g.groups != x.c() {
        return Err(Error::shape(
            OP,
            Axis::C,
            format!("input has {} channels but weight expects {} x {} groups", x.c(), w.c(), g.groups),
        ));
    }
    for (axis, input, kernel) in [(Axis::H, x.h(), w.h()), (Axis::W, x.w(), w.w())] {
        if kernel == 0 {
            return Err(Error::shape(OP, axis, "kernel extent is zero"));
        }
        let reach = (kernel - 1) * g.dilation + 1;
        if reach > input + 2 * g.padding {
            return Err(Error::shape(
                OP,
                axis,
                format!("effective kernel extent {reach} exceeds padded input extent {}", input + 2 * g.padding),
            ));
        }
    }
    if let Some(b) = bias {
        if b.numel() != c_out {
            return Err(Error::shape(
                OP,
                Axis::C,
                format!("bias has {} values for {c_out} output channels", b.numel()),
            ));
        }
    }
    Ok(Shape::new(x.n(), c_out, g.output_extent(x.h(), w.h()), g.output_extent(x.w(), w.w())))
}

/// Output positions `o` in `0..out_len` with `0 <= o * stride + offset < in_len`.
fn valid_range(out_len: usize, in_len: usize, stride: usize, offset: isize) -> (usize, usize) {
    let s = stride as isize;
    let start = if offset >= 0 { 0 } else { ((-offset) + s - 1) / s };
    let last = in_len as isize - 1 - offset;
    if last < 0 {
        return (0, 0);
    }
    let end = ((last / s) + 1).min(out_len as isize);
    let start = start.min(end);
    (start as usize, end as usize)
}

pub fn conv2d_forward(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, g: ConvGeometry) -> Result<Tensor> {
    let xs = x.shape();
    let ws = w.shape();
    let os = check_conv(xs, ws, bias, g)?;
    let (c_out, cin_pg, kh, kw) = (ws.n(), ws.c(), ws.h(), ws.w());
    let cout_pg = c_out / g.groups;
    let (oh, ow) = (os.h(), os.w());
    let (ih, iw) = (xs.h(), xs.w());
    let xd = x.data();
    let wd = w.data();
    let bd = bias.map(|b| b.data());

    let mut out = vec![0.0; os.numel()];
    out.par_chunks_mut(oh * ow).enumerate().for_each(|(plane_idx, plane)| {
        let n = plane_idx / c_out;
        let co = plane_idx % c_out;
        if let Some(b) = bd {
            plane.fill(b[co]);
        }
        let group = co / cout_pg;
        for ci_local in 0..cin_pg {
            let ci = group * cin_pg + ci_local;
            let xp = &xd[(n * xs.c() + ci) * ih * iw..][..ih * iw];
            for ky in 0..kh {
                let off_y = (ky * g.dilation) as isize - g.padding as isize;
                let (oy0, oy1) = valid_range(oh, ih, g.stride, off_y);
                for kx in 0..kw {
                    let wv = wd[((co * cin_pg + ci_local) * kh + ky) * kw + kx];
                    let off_x = (kx * g.dilation) as isize - g.padding as isize;
                    let (ox0, ox1) = valid_range(ow, iw, g.stride, off_x);
                    for oy in oy0..oy1 {
                        let iy = (oy * g.stride) as isize + off_y;
                        let xrow = &xp[iy as usize * iw..][..iw];
                        let orow = &mut plane[oy * ow..][..ow];
                        if g.stride == 1 {
                            let ix0 = (ox0 as isize + off_x) as usize;
                            for (o, xv) in orow[ox0..ox1].iter_mut().zip(&xrow[ix0..]) {
                                *o += wv * xv;
                            }
                        } else {
                            for (ox, o) in orow.iter_mut().enumerate().take(ox1).skip(ox0) {
                                let ix = ((ox * g.stride) as isize + off_x) as usize;
                                *o += wv * xrow[ix];
                            }
                        }
                    }
                }
            }
        }
    });
    Ok(Tensor::from_parts(os, out))
}

/// Gradients of a convolution with respect to input, weight and bias.
pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(x: &Tensor, w: &Tensor, g: ConvGeometry, gy: &Tensor) -> Result<ConvGrads> {
    let xs = x.shape();
    let ws = w.shape();
    let os = check_conv(xs, ws, None, g)?;
    if gy.shape() != os {
        return Err(Error::InvalidArgument(format!(
            "conv2d backward: output gradient {} does not match output {os}",
            gy.shape()
        )));
    }
    let (c_out, cin_pg, kh, kw) = (ws.n(), ws.c(), ws.h(), ws.w());
    let cout_pg = c_out / g.groups;
    let (oh, ow) = (os.h(), os.w());
    let (ih, iw) = (xs.h(), xs.w());
    let c_in = xs.c();
    let xd = x.data();
    let wd = w.data();
    let gd = gy.data();

    // d/dx: one task per input plane.
    let mut gx = vec![0.0; xs.numel()];
    gx.par_chunks_mut(ih * iw).enumerate().for_each(|(plane_idx, gxp)| {
        let n = plane_idx / c_in;
        let ci = plane_idx % c_in;
        let group = ci / cin_pg;
        let ci_local = ci % cin_pg;
        for co in group * cout_pg..(group + 1) * cout_pg {
            let gp = &gd[(n * c_out + co) * oh * ow..][..oh * ow];
            for ky in 0..kh {
                let off_y = (ky * g.dilation) as isize - g.padding as isize;
                let (oy0, oy1) = valid_range(oh, ih, g.stride, off_y);
                for kx in 0..kw {
                    let wv = wd[((co * cin_pg + ci_local) * kh + ky) * kw + kx];
                    let off_x = (kx * g.dilation) as isize - g.padding as isize;
                    let (ox0, ox1) = valid_range(ow, iw, g.stride, off_x);
                    for oy in oy0..oy1 {
                        let iy = ((oy * g.stride) as isize + off_y) as usize;
                        for ox in ox0..ox1 {
                            let ix = ((ox * g.stride) as isize + off_x) as usize;
                            gxp[iy * iw + ix] += wv * gp[oy * ow + ox];
                        }
                    }
                }
            }
        }
    });

    // d/dw: one task per output channel.
    let per_co = cin_pg * kh * kw;
    let mut gw = vec![0.0; ws.numel()];
    gw.par_chunks_mut(per_co).enumerate().for_each(|(co, gwc)| {
        let group = co / cout_pg;
        for ci_local in 0..cin_pg {
            let ci = group * cin_pg + ci_local;
            for ky in 0..kh {
                let off_y = (ky * g.dilation) as isize - g.padding as isize;
                let (oy0, oy1) = valid_range(oh, ih, g.stride, off_y);
                for kx in 0..kw {
                    let off_x = (kx * g.dilation) as isize - g.padding as isize;
                    let (ox0, ox1) = valid_range(ow, iw, g.stride, off_x);
                    let mut acc = 0.0;
                    for n in 0..xs.n() {
                        let xp = &xd[(n * c_in + ci) * ih * iw..][..ih * iw];
                        let gp = &gd[(n * c_out + co) * oh * ow..][..oh * ow];
                        for oy in oy0..oy1 {
                            let iy = ((oy * g.stride) as isize + off_y) as usize;
                            for ox in ox0..ox1 {
                                let ix = ((ox * g.stride) as isize + off_x) as usize;
                                acc += gp[oy * ow + ox] * xp[iy * iw + ix];
                            }
                        }
                    }
                    gwc[(ci_local * kh + ky) * kw + kx] = acc;
                }
            }
        }
    });

    let mut gb = vec![0.0; c_out];
    for (co, slot) in gb.iter_mut().enumerate() {
        for n in 0..xs.n() {
            *slot += gd[(n * c_out + co) * oh * ow..][..oh * ow].iter().sum::<f64>();
        }
    }

    Ok(ConvGrads {
        input: Tensor::from_parts(xs, gx),
        weight: Tensor::from_parts(ws, gw),
        bias: Tensor::from_parts(Shape::new(1, c_out, 1, 1), gb),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dilated_row_example() {
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 4), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![1.0, 0.0, 1.0]).unwrap();
        // Padding applies to both axes; a 1-row kernel over a 1-row input with
        // padding 1 yields three rows, the middle one being the real signal.
        let g = ConvGeometry { padding: 1, ..Default::default() };
        let y = conv2d_forward(&x, &w, None, g).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 3, 4));
        assert_eq!(&y.data()[4..8], &[2.0, 4.0, 6.0, 3.0]);
        assert!(y.data()[..4].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_pointwise_kernel() {
        let x = Tensor::uniform(Shape::new(2, 3, 4, 5), -1.0, 1.0, 3);
        let mut w = vec![0.0; 9];
        for c in 0..3 {
            w[c * 3 + c] = 1.0;
        }
        let w = Tensor::from_vec(Shape::new(3, 3, 1, 1), w).unwrap();
        let y = conv2d_forward(&x, &w, None, ConvGeometry::default()).unwrap();
        assert!(y.bit_eq(&x));
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let x = Tensor::uniform(Shape::new(1, 4, 6, 6), -1.0, 1.0, 1);
        let w = Tensor::zeros(Shape::new(2, 4, 3, 3));
        let b = Tensor::zeros(Shape::new(1, 2, 1, 1));
        let y = conv2d_forward(&x, &w, Some(&b), ConvGeometry::same(3, 2)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert_eq!(y.shape(), Shape::new(1, 2, 6, 6));
    }

    #[test]
    fn channel_mismatch_names_channel_axis() {
        let x = Tensor::zeros(Shape::new(1, 3, 4, 4));
        let w = Tensor::zeros(Shape::new(2, 4, 3, 3));
        let err = conv2d_forward(&x, &w, None, ConvGeometry::same(3, 1)).unwrap_err();
        assert!(matches!(err, Error::Shape { axis: Axis::C, .. }), "{err}");
    }

    #[test]
    fn oversized_dilation_names_spatial_axis() {
        let x = Tensor::zeros(Shape::new(1, 1, 3, 20));
        let w = Tensor::zeros(Shape::new(1, 1, 3, 3));
        let g = ConvGeometry { dilation: 5, ..Default::default() };
        let err = conv2d_forward(&x, &w, None, g).unwrap_err();
        assert!(matches!(err, Error::Shape { axis: Axis::H, .. }), "{err}");
    }

    #[test]
    fn groups_must_divide_channels() {
        let x = Tensor::zeros(Shape::new(1, 3, 4, 4));
        let w = Tensor::zeros(Shape::new(2, 1, 1, 1));
        let err = conv2d_forward(&x, &w, None, ConvGeometry::default().with_groups(2)).unwrap_err();
        assert!(matches!(err, Error::Divisibility { .. }), "{err}");
    }

    #[test]
    fn strided_output_extent() {
        let x = Tensor::uniform(Shape::new(1, 1, 7, 8), -1.0, 1.0, 2);
        let w = Tensor::uniform(Shape::new(1, 1, 3, 3), -1.0, 1.0, 4);
        let g = ConvGeometry { stride: 2, padding: 1, ..Default::default() };
        let y = conv2d_forward(&x, &w, None, g).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 4, 4));
    }
}

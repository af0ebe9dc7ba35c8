//! Direct per-output-element evaluation of the primitive kernels.

use crate::nd::Nd;

/// Every output element summed directly from its definition.
pub fn conv2d(
    x: &Nd,
    w: &Nd,
    bias: Option<&[f64]>,
    stride: usize,
    dilation: usize,
    groups: usize,
    padding: usize,
) -> Nd {
    let [n, c_in, h, wd] = x.dims;
    let [c_out, cin_pg, kh, kw] = w.dims;
    assert_eq!(cin_pg * groups, c_in);
    let oh = (h + 2 * padding - ((kh - 1) * dilation + 1)) / stride + 1;
    let ow = (wd + 2 * padding - ((kw - 1) * dilation + 1)) / stride + 1;
    let cout_pg = c_out / groups;
    let mut out = Nd::zeros([n, c_out, oh, ow]);
    for b in 0..n {
        for co in 0..c_out {
            let g = co / cout_pg;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map_or(0.0, |bv| bv[co]);
                    for cl in 0..cin_pg {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky * dilation) as isize - padding as isize;
                                let ix = (ox * stride + kx * dilation) as isize - padding as isize;
                                acc += w.get(co, cl, ky, kx) * x.get_padded(b, g * cin_pg + cl, iy, ix);
                            }
                        }
                    }
                    out.set(b, co, oy, ox, acc);
                }
            }
        }
    }
    out
}

/// Spreads kernel taps `rate` apart, filling the gaps with zeros.
pub fn zero_inflate(w: &Nd, rate: usize) -> Nd {
    let [co, ci, kh, kw] = w.dims;
    let mut out = Nd::zeros([co, ci, (kh - 1) * rate + 1, (kw - 1) * rate + 1]);
    for a in 0..co {
        for b in 0..ci {
            for y in 0..kh {
                for x in 0..kw {
                    out.set(a, b, y * rate, x * rate, w.get(a, b, y, x));
                }
            }
        }
    }
    out
}

pub fn channels(x: &Nd, start: usize, len: usize) -> Nd {
    let [n, _, h, w] = x.dims;
    let mut out = Nd::zeros([n, len, h, w]);
    for b in 0..n {
        for c in 0..len {
            for y in 0..h {
                for xx in 0..w {
                    out.set(b, c, y, xx, x.get(b, start + c, y, xx));
                }
            }
        }
    }
    out
}

pub fn concat(parts: &[&Nd]) -> Nd {
    let [n, _, h, w] = parts[0].dims;
    let total: usize = parts.iter().map(|p| p.dims[1]).sum();
    let mut out = Nd::zeros([n, total, h, w]);
    let mut base = 0;
    for p in parts {
        for b in 0..n {
            for c in 0..p.dims[1] {
                for y in 0..h {
                    for x in 0..w {
                        out.set(b, base + c, y, x, p.get(b, c, y, x));
                    }
                }
            }
        }
        base += p.dims[1];
    }
    out
}

/// Max over non-overlapping `k x k` windows.
pub fn maxpool(x: &Nd, k: usize) -> Nd {
    let [n, c, h, w] = x.dims;
    let mut out = Nd::zeros([n, c, h / k, w / k]);
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..h / k {
                for ox in 0..w / k {
                    let mut m = f64::NEG_INFINITY;
                    for dy in 0..k {
                        for dx in 0..k {
                            m = m.max(x.get(b, ch, oy * k + dy, ox * k + dx));
                        }
                    }
                    out.set(b, ch, oy, ox, m);
                }
            }
        }
    }
    out
}

/// Half-pixel bilinear upsampling written as the four-corner weighted sum.
pub fn upsample_bilinear(x: &Nd, f: usize) -> Nd {
    let [n, c, h, w] = x.dims;
    let mut out = Nd::zeros([n, c, h * f, w * f]);
    let coord = |i: usize, len: usize| {
        let s = ((i as f64 + 0.5) / f as f64 - 0.5).max(0.0);
        let i0 = (s.floor() as usize).min(len - 1);
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, s - i0 as f64)
    };
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..h * f {
                let (y0, y1, ty) = coord(oy, h);
                for ox in 0..w * f {
                    let (x0, x1, tx) = coord(ox, w);
                    let v = (1.0 - ty) * (1.0 - tx) * x.get(b, ch, y0, x0)
                        + (1.0 - ty) * tx * x.get(b, ch, y0, x1)
                        + ty * (1.0 - tx) * x.get(b, ch, y1, x0)
                        + ty * tx * x.get(b, ch, y1, x1);
                    out.set(b, ch, oy, ox, v);
                }
            }
        }
    }
    out
}

pub fn upsample_nearest(x: &Nd, f: usize) -> Nd {
    let [n, c, h, w] = x.dims;
    let mut out = Nd::zeros([n, c, h * f, w * f]);
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..h * f {
                for ox in 0..w * f {
                    out.set(b, ch, oy, ox, x.get(b, ch, oy / f, ox / f));
                }
            }
        }
    }
    out
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn relu(v: f64) -> f64 {
    v.max(0.0)
}

pub fn map(x: &Nd, f: impl Fn(f64) -> f64) -> Nd {
    Nd { dims: x.dims, data: x.data.iter().map(|&v| f(v)).collect() }
}

pub fn add(a: &Nd, b: &Nd) -> Nd {
    assert_eq!(a.dims, b.dims);
    Nd { dims: a.dims, data: a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect() }
}

/// Interleaves two equal channel halves: `[a0, b0, a1, b1, ...]`.
pub fn interleave_halves(x: &Nd) -> Nd {
    let [n, c, h, w] = x.dims;
    let half = c / 2;
    let mut out = Nd::zeros(x.dims);
    for b in 0..n {
        for j in 0..half {
            for y in 0..h {
                for xx in 0..w {
                    out.set(b, 2 * j, y, xx, x.get(b, j, y, xx));
                    out.set(b, 2 * j + 1, y, xx, x.get(b, half + j, y, xx));
                }
            }
        }
    }
    out
}

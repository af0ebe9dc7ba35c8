//! Block forward passes rebuilt from the reference loops in `prims`.

use maisenet_core::ParamSet;

use crate::nd::Nd;
use crate::prims;

fn weight(params: &ParamSet, prefix: &str) -> Nd {
    Nd::from_tensor(params.get(&format!("{prefix}.weight")).expect("weight present"))
}

fn values(params: &ParamSet, name: &str) -> Vec<f64> {
    params.get(name).expect("parameter present").data().to_vec()
}

fn bias(params: &ParamSet, prefix: &str) -> Vec<f64> {
    values(params, &format!("{prefix}.bias"))
}

/// Stride-1 conv with padding chosen to keep the spatial size.
pub fn conv_same(x: &Nd, params: &ParamSet, prefix: &str, dilation: usize, groups: usize) -> Nd {
    let w = weight(params, prefix);
    let b = bias(params, prefix);
    let pad = dilation * (w.dims[2] - 1) / 2;
    prims::conv2d(x, &w, Some(&b), 1, dilation, groups, pad)
}

pub fn aspp(x: &Nd, rates: &[usize], params: &ParamSet, prefix: &str) -> Nd {
    let branches: Vec<Nd> =
        rates.iter().enumerate().map(|(i, &r)| conv_same(x, params, &format!("{prefix}.branch{i}"), r, 1)).collect();
    let refs: Vec<&Nd> = branches.iter().collect();
    conv_same(&prims::concat(&refs), params, &format!("{prefix}.reduce"), 1, 1)
}

/// Returns `(output, attention)` with the attention as `(N, 1, HW, HW)`.
pub fn nlb(x: &Nd, params: &ParamSet, prefix: &str) -> (Nd, Nd) {
    let [n, _, h, w] = x.dims;
    let hw = h * w;
    let theta = conv_same(x, params, &format!("{prefix}.theta"), 1, 1);
    let phi = conv_same(x, params, &format!("{prefix}.phi"), 1, 1);
    let g = conv_same(x, params, &format!("{prefix}.g"), 1, 1);
    let ce = theta.dims[1];
    let at = |t: &Nd, b: usize, c: usize, p: usize| t.get(b, c, p / w, p % w);
    let mut attention = Nd::zeros([n, 1, hw, hw]);
    let mut y = Nd::zeros([n, ce, h, w]);
    for b in 0..n {
        for i in 0..hw {
            let logits: Vec<f64> =
                (0..hw).map(|j| (0..ce).map(|c| at(&theta, b, c, i) * at(&phi, b, c, j)).sum()).collect();
            let row = prims::softmax(&logits);
            for (j, &a) in row.iter().enumerate() {
                attention.set(b, 0, i, j, a);
            }
            for c in 0..ce {
                let v: f64 = (0..hw).map(|j| row[j] * at(&g, b, c, j)).sum();
                y.set(b, c, i / w, i % w, v);
            }
        }
    }
    let z = conv_same(&y, params, &format!("{prefix}.z"), 1, 1);
    (prims::add(x, &z), attention)
}

/// Returns `(channel attention (N,C), spatial attention (N,1,H,W), output)`.
pub fn cbam(x: &Nd, params: &ParamSet, prefix: &str) -> (Vec<Vec<f64>>, Nd, Nd) {
    let [n, c, h, w] = x.dims;
    let w1 = weight(params, &format!("{prefix}.mlp1"));
    let b1 = bias(params, &format!("{prefix}.mlp1"));
    let w2 = weight(params, &format!("{prefix}.mlp2"));
    let b2 = bias(params, &format!("{prefix}.mlp2"));
    let hidden = w1.dims[0];
    let mlp = |v: &[f64]| -> Vec<f64> {
        let hid: Vec<f64> =
            (0..hidden).map(|k| prims::relu(b1[k] + (0..c).map(|j| w1.get(k, j, 0, 0) * v[j]).sum::<f64>())).collect();
        (0..c).map(|j| b2[j] + (0..hidden).map(|k| w2.get(j, k, 0, 0) * hid[k]).sum::<f64>()).collect()
    };
    let mut ca = Vec::with_capacity(n);
    let mut refined = Nd::zeros(x.dims);
    for b in 0..n {
        let mut avg = vec![0.0; c];
        let mut max = vec![f64::NEG_INFINITY; c];
        for ch in 0..c {
            for yy in 0..h {
                for xx in 0..w {
                    let v = x.get(b, ch, yy, xx);
                    avg[ch] += v;
                    max[ch] = max[ch].max(v);
                }
            }
            avg[ch] /= (h * w) as f64;
        }
        let (ma, mm) = (mlp(&avg), mlp(&max));
        let att: Vec<f64> = (0..c).map(|j| prims::sigmoid(ma[j] + mm[j])).collect();
        for ch in 0..c {
            for yy in 0..h {
                for xx in 0..w {
                    refined.set(b, ch, yy, xx, x.get(b, ch, yy, xx) * att[ch]);
                }
            }
        }
        ca.push(att);
    }
    let mut stats = Nd::zeros([n, 2, h, w]);
    for b in 0..n {
        for yy in 0..h {
            for xx in 0..w {
                let col: Vec<f64> = (0..c).map(|ch| refined.get(b, ch, yy, xx)).collect();
                stats.set(b, 0, yy, xx, col.iter().sum::<f64>() / c as f64);
                stats.set(b, 1, yy, xx, col.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
            }
        }
    }
    let sa = prims::map(&conv_same(&stats, params, &format!("{prefix}.spatial"), 1, 1), prims::sigmoid);
    let mut out = Nd::zeros(x.dims);
    for b in 0..n {
        for ch in 0..c {
            for yy in 0..h {
                for xx in 0..w {
                    out.set(b, ch, yy, xx, refined.get(b, ch, yy, xx) * sa.get(b, 0, yy, xx));
                }
            }
        }
    }
    (ca, sa, out)
}

/// Two conv groups and a two-way interleave, as in the default configuration.
pub fn csab(backbone: &Nd, previous: &Nd, params: &ParamSet, prefix: &str) -> Nd {
    let cat = prims::concat(&[backbone, previous]);
    let grouped = conv_same(&cat, params, &format!("{prefix}.group_conv"), 1, 2);
    let shuffled = prims::interleave_halves(&grouped);
    cbam(&shuffled, params, &format!("{prefix}.cbam")).2
}

/// Returns `(output, kernels)`; the output is the plain weighted sum.
pub fn carafe(x: &Nd, params: &ParamSet, prefix: &str, factor: usize, k_up: usize) -> (Nd, Nd) {
    let [n, c, h, w] = x.dims;
    let compressed = conv_same(x, params, &format!("{prefix}.compress"), 1, 1);
    let enc = conv_same(&compressed, params, &format!("{prefix}.encoder"), 1, 1);
    let (oh, ow, kk) = (h * factor, w * factor, k_up * k_up);
    let mut kernels = Nd::zeros([n, kk, oh, ow]);
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let sub = (oy % factor) * factor + ox % factor;
                let logits: Vec<f64> =
                    (0..kk).map(|t| enc.get(b, t * factor * factor + sub, oy / factor, ox / factor)).collect();
                for (t, v) in prims::softmax(&logits).into_iter().enumerate() {
                    kernels.set(b, t, oy, ox, v);
                }
            }
        }
    }
    let r = (k_up / 2) as isize;
    let mut out = Nd::zeros([n, c, oh, ow]);
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let (sy, sx) = ((oy / factor) as isize, (ox / factor) as isize);
                    let mut acc = 0.0;
                    for a in 0..k_up as isize {
                        for d in 0..k_up as isize {
                            let t = (a * k_up as isize + d) as usize;
                            acc += kernels.get(b, t, oy, ox) * x.get_padded(b, ch, sy + a - r, sx + d - r);
                        }
                    }
                    out.set(b, ch, oy, ox, acc);
                }
            }
        }
    }
    (out, kernels)
}

/// Moves a map between pyramid levels (1-based).
pub fn rescale(x: &Nd, from: usize, to: usize) -> Nd {
    let mut v = x.clone();
    if to < from {
        for _ in to..from {
            v = prims::upsample_bilinear(&v, 2);
        }
    } else {
        for _ in from..to {
            v = prims::maxpool(&v, 2);
        }
    }
    v
}

/// Mean of five levels at P3 resolution.
pub fn fbo(levels: &[Nd]) -> Nd {
    let resized: Vec<Nd> = levels.iter().enumerate().map(|(i, l)| rescale(l, i + 1, 3)).collect();
    let mut out = Nd::zeros(resized[0].dims);
    for (k, slot) in out.data.iter_mut().enumerate() {
        *slot = resized.iter().map(|r| r.data[k]).sum::<f64>() / levels.len() as f64;
    }
    out
}

pub fn reconstruct(levels: &[Nd], refined: &Nd) -> Vec<Nd> {
    levels.iter().enumerate().map(|(i, l)| prims::add(l, &rescale(refined, 3, i + 1))).collect()
}

/// Returns `(output, context weights per instance)`.
pub fn gcb(x: &Nd, params: &ParamSet, prefix: &str) -> (Nd, Vec<Vec<f64>>) {
    let [n, c, h, w] = x.dims;
    let logits = conv_same(x, params, &format!("{prefix}.context"), 1, 1);
    let wt1 = weight(params, &format!("{prefix}.transform1"));
    let bt1 = bias(params, &format!("{prefix}.transform1"));
    let wt2 = weight(params, &format!("{prefix}.transform2"));
    let bt2 = bias(params, &format!("{prefix}.transform2"));
    let gain = values(params, &format!("{prefix}.norm.weight"));
    let shift = values(params, &format!("{prefix}.norm.bias"));
    let mid = wt1.dims[0];
    let mut out = Nd::zeros(x.dims);
    let mut weights = Vec::with_capacity(n);
    for b in 0..n {
        let l: Vec<f64> = logits.data[b * h * w..(b + 1) * h * w].to_vec();
        let a = prims::softmax(&l);
        let ctx: Vec<f64> = (0..c).map(|ch| (0..h * w).map(|p| a[p] * x.get(b, ch, p / w, p % w)).sum()).collect();
        let t: Vec<f64> =
            (0..mid).map(|k| bt1[k] + (0..c).map(|j| wt1.get(k, j, 0, 0) * ctx[j]).sum::<f64>()).collect();
        let mean = t.iter().sum::<f64>() / mid as f64;
        let var = t.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / mid as f64;
        let normed: Vec<f64> =
            (0..mid).map(|k| prims::relu((t[k] - mean) / (var + 1e-5).sqrt() * gain[k] + shift[k])).collect();
        for ch in 0..c {
            let delta = bt2[ch] + (0..mid).map(|k| wt2.get(ch, k, 0, 0) * normed[k]).sum::<f64>();
            for yy in 0..h {
                for xx in 0..w {
                    out.set(b, ch, yy, xx, x.get(b, ch, yy, xx) + delta);
                }
            }
        }
        weights.push(a);
    }
    (out, weights)
}

/// Mask head: ReLU 3x3 convs, 2x nearest upsampling, 1x1 logits.
pub fn mask_head(x: &Nd, params: &ParamSet, prefix: &str, convs: usize) -> (Nd, Nd) {
    let mut h = x.clone();
    for j in 0..convs {
        h = prims::map(&conv_same(&h, params, &format!("{prefix}.head.conv{j}"), 1, 1), prims::relu);
    }
    let up = prims::upsample_nearest(&h, 2);
    let logits = conv_same(&up, params, &format!("{prefix}.head.logits"), 1, 1);
    (h, logits)
}

pub fn mai_chain(roi: &Nd, params: &ParamSet, stages: usize, convs: usize, rates: &[usize]) -> Vec<Nd> {
    let (mut feats, first) = mask_head(roi, params, "mai.stage1", convs);
    let mut logits = vec![first];
    for s in 2..=stages {
        let p = format!("mai.stage{s}");
        let a = aspp(&feats, rates, params, &format!("{p}.aspp"));
        let (refined, _) = nlb(&a, params, &format!("{p}.nlb"));
        let fused = csab(roi, &refined, params, &format!("{p}.csab"));
        let restored = conv_same(&fused, params, &format!("{p}.restore"), 1, 1);
        let (h, l) = mask_head(&restored, params, &p, convs);
        feats = h;
        logits.push(l);
    }
    logits
}

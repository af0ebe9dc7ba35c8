//! Batched matrix products and pure data rearrangements.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Axis, Shape, Tensor};

/// Treats `(N, C, H, W)` as `N * C` matrices of `H x W` and multiplies pairwise.
pub fn matmul_batched(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    for axis in [Axis::N, Axis::C] {
        if sa.dim(axis) != sb.dim(axis) {
            return Err(Error::shape("matmul_batched", axis, format!("batch extents differ: {sa} vs {sb}")));
        }
    }
    if sa.w() != sb.h() {
        return Err(Error::shape("matmul_batched", Axis::W, format!("inner dimensions differ: {sa} x {sb}")));
    }
    let (m, k, p) = (sa.h(), sa.w(), sb.w());
    let os = Shape::new(sa.n(), sa.c(), m, p);
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; os.numel()];
    out.par_chunks_mut(p.max(1)).enumerate().for_each(|(row_idx, row)| {
        let batch = row_idx / m.max(1);
        let i = row_idx % m.max(1);
        let arow = &ad[(batch * m + i) * k..][..k];
        let bmat = &bd[batch * k * p..][..k * p];
        for (kk, &av) in arow.iter().enumerate() {
            for (o, bv) in row.iter_mut().zip(&bmat[kk * p..][..p]) {
                *o += av * bv;
            }
        }
    });
    Ok(Tensor::from_parts(os, out))
}

/// Swaps the last two axes of every matrix in the batch.
pub fn transpose(input: &Tensor) -> Tensor {
    let s = input.shape();
    let (h, w) = (s.h(), s.w());
    let x = input.data();
    let mut out = Vec::with_capacity(x.len());
    for mat in x.chunks((h * w).max(1)) {
        for j in 0..w {
            for i in 0..h {
                out.push(mat[i * w + j]);
            }
        }
    }
    Tensor::from_parts(Shape::new(s.n(), s.c(), w, h), out)
}

/// Depth-to-space: `(N, C * f^2, H, W) -> (N, C, f * H, f * W)` with
/// `out[n, c, h * f + i, w * f + j] = in[n, c * f^2 + i * f + j, h, w]`.
pub fn pixel_shuffle(input: &Tensor, factor: usize) -> Result<Tensor> {
    let s = input.shape();
    let f2 = factor * factor;
    if factor == 0 || !s.c().is_multiple_of(f2) {
        return Err(Error::divisibility(
            "pixel_shuffle",
            format!("{} channels not divisible by factor^2 = {f2}", s.c()),
        ));
    }
    let c = s.c() / f2;
    let os = Shape::new(s.n(), c, s.h() * factor, s.w() * factor);
    let mut out = vec![0.0; os.numel()];
    for n in 0..s.n() {
        for cc in 0..c {
            for i in 0..factor {
                for j in 0..factor {
                    let src = input.plane(n, cc * f2 + i * factor + j);
                    for h in 0..s.h() {
                        for w in 0..s.w() {
                            let oi = os_index(os, n, cc, h * factor + i, w * factor + j);
                            out[oi] = src[h * s.w() + w];
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(os, out))
}

/// Space-to-depth, the exact inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle(input: &Tensor, factor: usize) -> Result<Tensor> {
    let s = input.shape();
    if factor == 0 {
        return Err(Error::InvalidArgument("pixel_unshuffle: zero factor".into()));
    }
    for axis in [Axis::H, Axis::W] {
        if !s.dim(axis).is_multiple_of(factor) {
            return Err(Error::shape(
                "pixel_unshuffle",
                axis,
                format!("extent {} not divisible by {factor}", s.dim(axis)),
            ));
        }
    }
    let f2 = factor * factor;
    let (h, w) = (s.h() / factor, s.w() / factor);
    let os = Shape::new(s.n(), s.c() * f2, h, w);
    let mut out = vec![0.0; os.numel()];
    for n in 0..s.n() {
        for cc in 0..s.c() {
            for i in 0..factor {
                for j in 0..factor {
                    for y in 0..h {
                        for x in 0..w {
                            let oi = os_index(os, n, cc * f2 + i * factor + j, y, x);
                            out[oi] = input.at(n, cc, y * factor + i, x * factor + j);
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(os, out))
}

fn os_index(s: Shape, n: usize, c: usize, h: usize, w: usize) -> usize {
    ((n * s.c() + c) * s.h() + h) * s.w() + w
}

/// Output channel `k` is input channel `perm[k]`.
pub fn permute_channels(input: &Tensor, perm: &[usize]) -> Result<Tensor> {
    let s = input.shape();
    let mut seen = vec![false; s.c()];
    if perm.len() != s.c() || perm.iter().any(|&p| p >= s.c() || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::shape(
            "permute_channels",
            Axis::C,
            format!("{perm:?} is not a permutation of {} channels", s.c()),
        ));
    }
    let mut out = Vec::with_capacity(input.numel());
    for n in 0..s.n() {
        for &src in perm {
            out.extend_from_slice(input.plane(n, src));
        }
    }
    Ok(Tensor::from_parts(s, out))
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (k, &p) in perm.iter().enumerate() {
        inv[p] = k;
    }
    inv
}

/// Channel permutation that splits `channels` into `groups` consecutive
/// blocks and interleaves them: output `j * groups + i` takes input
/// `i * (channels / groups) + j`.
pub fn shuffle_permutation(channels: usize, groups: usize) -> Result<Vec<usize>> {
    if groups == 0 || !channels.is_multiple_of(groups) {
        return Err(Error::divisibility(
            "channel_shuffle",
            format!("{channels} channels not divisible by {groups} groups"),
        ));
    }
    let per = channels / groups;
    let mut perm = vec![0; channels];
    for i in 0..groups {
        for j in 0..per {
            perm[j * groups + i] = i * per + j;
        }
    }
    Ok(perm)
}

pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts.first().ok_or_else(|| Error::InvalidArgument("concat_channels: no inputs".into()))?.shape();
    for p in parts {
        for axis in [Axis::N, Axis::H, Axis::W] {
            if p.shape().dim(axis) != first.dim(axis) {
                return Err(Error::shape("concat_channels", axis, format!("{} vs {}", p.shape(), first)));
            }
        }
    }
    let c: usize = parts.iter().map(|p| p.shape().c()).sum();
    let os = first.with(Axis::C, c);
    let mut out = Vec::with_capacity(os.numel());
    for n in 0..first.n() {
        for p in parts {
            let block = p.shape().c() * p.shape().plane();
            out.extend_from_slice(&p.data()[n * block..][..block]);
        }
    }
    Ok(Tensor::from_parts(os, out))
}

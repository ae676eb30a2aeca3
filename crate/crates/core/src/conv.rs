//! Dilated same-padding convolution, align-corners bilinear upsampling and
//! spatial broadcast.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{DType, FeatureMap, WeightTensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    dilation: usize,
}

impl ConvSpec {
    pub fn new(dilation: usize) -> Result<Self> {
        if dilation == 0 {
            return Err(Error::ZeroDilation);
        }
        Ok(Self { dilation })
    }

    pub fn dilation(&self) -> usize {
        self.dilation
    }
}

impl Default for ConvSpec {
    fn default() -> Self {
        Self { dilation: 1 }
    }
}

/// Weights reordered to `[a][b][ci][o]` so the innermost loop runs over
/// contiguous output channels.
pub(crate) fn tap_major(w: &WeightTensor) -> Vec<f64> {
    let (out_c, in_c, kh, kw) = (w.out_c(), w.in_c(), w.kh(), w.kw());
    let mut t = vec![0.0; out_c * in_c * kh * kw];
    for o in 0..out_c {
        for ci in 0..in_c {
            for a in 0..kh {
                for b in 0..kw {
                    t[((a * kw + b) * in_c + ci) * out_c + o] = w.weight(o, ci, a, b);
                }
            }
        }
    }
    t
}

/// `out(i, j, o) = bias[o] + sum W[o, ci, a, b] * X(i + d (a - rh), j + d (b - rw), ci)`
/// with zero padding; output has `W.out_c` channels and `X`'s dtype.
pub fn conv2d(x: &FeatureMap, weights: &WeightTensor, spec: &ConvSpec) -> Result<FeatureMap> {
    let (h, w, in_c) = x.shape();
    if weights.in_c() != in_c {
        return Err(Error::ChannelMismatch { expected: weights.in_c(), actual: in_c });
    }
    let (out_c, kh, kw) = (weights.out_c(), weights.kh(), weights.kw());
    let (rh, rw) = ((kh / 2) as isize, (kw / 2) as isize);
    let d = spec.dilation as isize;
    let taps = tap_major(weights);
    let src = x.data();
    let mut out = vec![0.0; h * w * out_c];
    let mut acc = vec![0.0; out_c];
    for i in 0..h {
        for j in 0..w {
            acc.iter_mut().for_each(|v| *v = 0.0);
            for a in 0..kh {
                let y = i as isize + d * (a as isize - rh);
                if y < 0 || y >= h as isize {
                    continue;
                }
                for b in 0..kw {
                    let xx = j as isize + d * (b as isize - rw);
                    if xx < 0 || xx >= w as isize {
                        continue;
                    }
                    let px = &src[(y as usize * w + xx as usize) * in_c..][..in_c];
                    let block = &taps[(a * kw + b) * in_c * out_c..][..in_c * out_c];
                    for (xv, wrow) in px.iter().zip(block.chunks_exact(out_c)) {
                        for (s, wv) in acc.iter_mut().zip(wrow) {
                            *s += wv * xv;
                        }
                    }
                }
            }
            let dst = &mut out[(i * w + j) * out_c..][..out_c];
            for ((o, s), bias) in dst.iter_mut().zip(&acc).zip(weights.bias()) {
                *o = bias + s;
            }
        }
    }
    Ok(FeatureMap::from_parts(h, w, out_c, x.dtype(), out))
}

/// Source index and fractional weight for align-corners sampling.
/// Computed with integer arithmetic so that `out == in` is exact.
pub(crate) fn align_corners_axis(out_len: usize, in_len: usize) -> Vec<(usize, usize, f64)> {
    (0..out_len)
        .map(|i| {
            if out_len == 1 || in_len == 1 {
                return (0, 0, 0.0);
            }
            let num = i * (in_len - 1);
            let den = out_len - 1;
            let lo = num / den;
            let frac = (num % den) as f64 / den as f64;
            (lo, (lo + 1).min(in_len - 1), frac)
        })
        .collect()
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    let v = a + t * (b - a);
    // keep the blend inside [min, max] despite rounding
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    v.clamp(lo, hi)
}

/// Align-corners bilinear resize to `out_h x out_w`.
pub fn bilinear_upsample(x: &FeatureMap, out_h: usize, out_w: usize) -> Result<FeatureMap> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::ZeroDimension { h: out_h, w: out_w, c: x.c() });
    }
    let (h, w, c) = x.shape();
    let rows = align_corners_axis(out_h, h);
    let cols = align_corners_axis(out_w, w);
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for &(y0, y1, fy) in &rows {
        for &(x0, x1, fx) in &cols {
            let (p00, p01) = (x.pixel(y0, x0), x.pixel(y0, x1));
            let (p10, p11) = (x.pixel(y1, x0), x.pixel(y1, x1));
            for k in 0..c {
                let top = lerp(p00[k], p01[k], fx);
                let bot = lerp(p10[k], p11[k], fx);
                out.push(lerp(top, bot, fy));
            }
        }
    }
    Ok(FeatureMap::from_parts(out_h, out_w, c, x.dtype(), out))
}

/// An `h x w` map holding `v` at every position.
pub fn broadcast_spatial(v: &[f64], h: usize, w: usize, dtype: DType) -> Result<FeatureMap> {
    let mut data = Vec::with_capacity(h * w * v.len());
    for _ in 0..h * w {
        data.extend_from_slice(v);
    }
    FeatureMap::new(h, w, v.len(), dtype, data)
}

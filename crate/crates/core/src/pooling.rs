//! Stride-1, same-size pooling with dilation, and pooling pyramids.
//!
//! Every pooling window is square with an odd side `k`; tap `(a, b)` reads
//! the input at offset `(d * (a - r), d * (b - r))` with `r = (k - 1) / 2`.
//! Taps that fall outside the map read zero. Within a window the taps are
//! summed in row-major order, per channel, in `f64`.
//!
//! A pyramid with base kernel `k` and `L` levels holds the valid-count
//! averages over windows of side `k, k^2, ..., k^L`.
//! [`pyramid_naive`] sums each big window directly. [`pyramid_cascaded`]
//! reuses level `i` to build level `i + 1` with a `k x k` window of
//! dilation `k^i`. To stay exact at the borders it keeps unnormalized sums
//! and in-bounds tap counts on a grid extended by the remaining reach of the
//! later levels. The next level's window may land outside the map, where the
//! partial sums are nonzero.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{DType, FeatureMap};
use crate::{Error, Result};

/// Normalization applied to a window sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Norm {
    /// Plain sum, zero padding.
    Sum,
    /// Divide by the number of in-bounds taps.
    AvgValidCount,
    /// Divide by `k^2` regardless of the border.
    AvgIncludePad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PoolSpec {
    kernel: usize,
    dilation: usize,
    norm: Norm,
}

impl PoolSpec {
    pub fn new(kernel: usize, dilation: usize, norm: Norm) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::EvenKernel(kernel));
        }
        if dilation == 0 {
            return Err(Error::ZeroDilation);
        }
        Ok(Self { kernel, dilation, norm })
    }

    /// Valid-count average, the canonical pooling of every context module.
    pub fn avg(kernel: usize, dilation: usize) -> Result<Self> {
        Self::new(kernel, dilation, Norm::AvgValidCount)
    }

    pub fn sum(kernel: usize, dilation: usize) -> Result<Self> {
        Self::new(kernel, dilation, Norm::Sum)
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn dilation(&self) -> usize {
        self.dilation
    }

    pub fn norm(&self) -> Norm {
        self.norm
    }

    /// Signed tap offsets along one axis.
    pub fn offsets(&self) -> impl Iterator<Item = isize> + Clone {
        let r = (self.kernel / 2) as isize;
        let d = self.dilation as isize;
        (0..self.kernel as isize).map(move |a| d * (a - r))
    }
}

/// Zero-padded dilated window sum between two grids sharing a frame:
/// destination `(i, j)` is centred on source `(i + shift, j + shift)`.
///
/// `taps` advances by `k` for every window row visited (padded rows
/// included), i.e. by `k^2` per destination element.
#[allow(clippy::too_many_arguments)]
pub(crate) fn window_sum(
    src: &[f64],
    (sh, sw): (usize, usize),
    c: usize,
    (dh, dw): (usize, usize),
    shift: isize,
    k: usize,
    d: usize,
    taps: &mut u64,
) -> Vec<f64> {
    let r = (k / 2) as isize;
    let d = d as isize;
    let (sh_i, sw_i) = (sh as isize, sw as isize);
    let mut out = vec![0.0; dh * dw * c];
    for i in 0..dh {
        for j in 0..dw {
            let acc = &mut out[(i * dw + j) * c..][..c];
            for a in 0..k as isize {
                *taps += (k * c) as u64;
                let y = i as isize + shift + d * (a - r);
                if y < 0 || y >= sh_i {
                    continue;
                }
                let row = &src[y as usize * sw * c..][..sw * c];
                for b in 0..k as isize {
                    let x = j as isize + shift + d * (b - r);
                    if x < 0 || x >= sw_i {
                        continue;
                    }
                    let px = &row[x as usize * c..][..c];
                    for (s, v) in acc.iter_mut().zip(px) {
                        *s += v;
                    }
                }
            }
        }
    }
    out
}

fn in_bounds_taps(pos: usize, len: usize, spec: &PoolSpec) -> usize {
    spec.offsets()
        .filter(|&o| {
            let p = pos as isize + o;
            p >= 0 && p < len as isize
        })
        .count()
}

/// Unnormalized window sum with zero padding. The spec's norm is ignored.
pub fn sum_pool(x: &FeatureMap, spec: &PoolSpec) -> FeatureMap {
    let (h, w, c) = x.shape();
    let mut taps = 0;
    let data = window_sum(x.data(), (h, w), c, (h, w), 0, spec.kernel, spec.dilation, &mut taps);
    FeatureMap::from_parts(h, w, c, x.dtype(), data)
}

/// Number of in-bounds taps of the window centred at each position
/// (`c = 1`, `f64`).
pub fn count_map(h: usize, w: usize, spec: &PoolSpec) -> Result<FeatureMap> {
    let rows: Vec<usize> = (0..h).map(|i| in_bounds_taps(i, h, spec)).collect();
    let cols: Vec<usize> = (0..w).map(|j| in_bounds_taps(j, w, spec)).collect();
    let data = rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r * c) as f64)).collect();
    FeatureMap::new(h, w, 1, DType::F64, data)
}

/// Pooling with whatever normalization the spec names.
pub fn pool(x: &FeatureMap, spec: &PoolSpec) -> FeatureMap {
    let (h, w, c) = x.shape();
    let mut taps = 0;
    let mut data = window_sum(x.data(), (h, w), c, (h, w), 0, spec.kernel, spec.dilation, &mut taps);
    match spec.norm {
        Norm::Sum => {}
        Norm::AvgIncludePad => {
            let area = (spec.kernel * spec.kernel) as f64;
            data.iter_mut().for_each(|v| *v /= area);
        }
        Norm::AvgValidCount => {
            let counts = count_map(h, w, spec).expect("dims come from a valid map");
            for (px, n) in data.chunks_exact_mut(c).zip(counts.data()) {
                px.iter_mut().for_each(|v| *v /= n);
            }
        }
    }
    FeatureMap::from_parts(h, w, c, x.dtype(), data)
}

/// Average pooling; rejects [`Norm::Sum`].
pub fn avg_pool(x: &FeatureMap, spec: &PoolSpec) -> Result<FeatureMap> {
    if spec.norm == Norm::Sum {
        return Err(Error::SumNorm);
    }
    Ok(pool(x, spec))
}

/// Per-channel mean over all positions.
pub fn global_avg_pool(x: &FeatureMap) -> Vec<f64> {
    let c = x.c();
    let mut acc = vec![0.0; c];
    for px in x.data().chunks_exact(c) {
        acc.iter_mut().zip(px).for_each(|(s, v)| *s += v);
    }
    let n = (x.h() * x.w()) as f64;
    acc.iter_mut().for_each(|s| *s /= n);
    acc
}

/// Which pyramid algorithm to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum PyramidImpl {
    /// Direct summation over every `k^i` window.
    Naive,
    /// Dilated `k x k` reuse of the previous level.
    #[default]
    Cascaded,
}

impl PyramidImpl {
    pub fn name(self) -> &'static str {
        match self {
            PyramidImpl::Naive => "naive",
            PyramidImpl::Cascaded => "cascaded",
        }
    }
}

impl core::str::FromStr for PyramidImpl {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(PyramidImpl::Naive),
            "cascaded" => Ok(PyramidImpl::Cascaded),
            other => Err(Error::InvalidArgument(alloc::format!("unknown pyramid impl `{other}`"))),
        }
    }
}

/// Averages over windows of side `base_k, base_k^2, ..., base_k^L`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pyramid {
    base_k: usize,
    levels: Vec<FeatureMap>,
}

impl Pyramid {
    pub fn base_k(&self) -> usize {
        self.base_k
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Level `i` (1-based, effective kernel `base_k^i`).
    pub fn level(&self, i: usize) -> &FeatureMap {
        &self.levels[i - 1]
    }

    pub fn levels(&self) -> &[FeatureMap] {
        &self.levels
    }

    pub fn into_levels(self) -> Vec<FeatureMap> {
        self.levels
    }

    /// Largest elementwise difference over all levels.
    pub fn max_abs_diff(&self, other: &Pyramid) -> f64 {
        if self.len() != other.len() {
            return f64::INFINITY;
        }
        self.levels.iter().zip(&other.levels).map(|(a, b)| a.max_abs_diff(b)).fold(0.0, f64::max)
    }
}

/// Arithmetic performed by a pyramid evaluation, as counted inside the loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PoolStats {
    /// Window taps accumulated into data tensors.
    pub data_adds: u64,
    /// Window taps accumulated into count tensors.
    pub count_adds: u64,
}

pub(crate) fn check_pyramid(base_k: usize, levels: u32) -> Result<usize> {
    if base_k < 3 || base_k % 2 == 0 {
        return Err(Error::InvalidBase(base_k));
    }
    if levels == 0 {
        return Err(Error::ZeroLevels);
    }
    let top = base_k.checked_pow(levels).ok_or(Error::KernelOverflow { base: base_k, levels })?;
    // window offsets are signed
    if top > isize::MAX as usize / 2 {
        return Err(Error::KernelOverflow { base: base_k, levels });
    }
    Ok(top)
}

pub fn pyramid_naive(x: &FeatureMap, base_k: usize, levels: u32) -> Result<Pyramid> {
    pyramid_naive_counted(x, base_k, levels).map(|(p, _)| p)
}

/// [`pyramid_naive`] plus the tap counters.
pub fn pyramid_naive_counted(x: &FeatureMap, base_k: usize, levels: u32) -> Result<(Pyramid, PoolStats)> {
    check_pyramid(base_k, levels)?;
    let (h, w, c) = x.shape();
    let mut stats = PoolStats::default();
    let mut out = Vec::with_capacity(levels as usize);
    let mut k = 1;
    for _ in 0..levels {
        k *= base_k;
        let spec = PoolSpec::avg(k, 1)?;
        let mut sums = window_sum(x.data(), (h, w), c, (h, w), 0, k, 1, &mut stats.data_adds);
        let counts = count_map(h, w, &spec)?;
        for (px, n) in sums.chunks_exact_mut(c).zip(counts.data()) {
            px.iter_mut().for_each(|v| *v /= n);
        }
        out.push(FeatureMap::from_parts(h, w, c, x.dtype(), sums));
    }
    Ok((Pyramid { base_k, levels: out }, stats))
}

/// Halo margins for the cascade: entry `i` (0-based level) is how far level
/// `i + 1`'s partial sums must extend past the map so that the remaining
/// levels never clip. The last entry is always zero.
pub(crate) fn cascade_margins(base_k: usize, levels: u32) -> Vec<usize> {
    let r = base_k / 2;
    let mut margins = vec![0; levels as usize];
    let mut reach = 0;
    let mut d = base_k.pow(levels - 1);
    for i in (0..levels as usize).rev() {
        margins[i] = reach;
        reach += r * d;
        d /= base_k;
    }
    margins
}

/// Sums and counts for every cascade level on its extended grid.
pub(crate) struct CascadeState {
    pub margins: Vec<usize>,
    pub sums: Vec<Vec<f64>>,
    pub counts: Vec<Vec<f64>>,
}

pub(crate) fn cascade_forward(
    x: &FeatureMap,
    base_k: usize,
    levels: u32,
    with_sums: bool,
    stats: &mut PoolStats,
) -> CascadeState {
    let (h, w, c) = x.shape();
    let margins = cascade_margins(base_k, levels);
    let ones = vec![1.0; h * w];
    let mut sums: Vec<Vec<f64>> = Vec::with_capacity(levels as usize);
    let mut counts: Vec<Vec<f64>> = Vec::with_capacity(levels as usize);
    let mut prev_dims = (h, w);
    let mut prev_margin = 0usize;
    let mut d = 1;
    for &m in &margins {
        let dims = (h + 2 * m, w + 2 * m);
        let shift = prev_margin as isize - m as isize;
        let (src, src_n): (&[f64], &[f64]) = match (sums.last(), counts.last()) {
            (Some(s), Some(n)) => (s.as_slice(), n.as_slice()),
            _ => (x.data(), ones.as_slice()),
        };
        let s = if with_sums {
            window_sum(src, prev_dims, c, dims, shift, base_k, d, &mut stats.data_adds)
        } else {
            Vec::new()
        };
        let n = window_sum(src_n, prev_dims, 1, dims, shift, base_k, d, &mut stats.count_adds);
        sums.push(s);
        counts.push(n);
        prev_dims = dims;
        prev_margin = m;
        d *= base_k;
    }
    CascadeState { margins, sums, counts }
}

/// Crop the `h x w` interior of a grid extended by `margin` on each side.
pub(crate) fn crop(src: &[f64], margin: usize, h: usize, w: usize, c: usize) -> Vec<f64> {
    let sw = w + 2 * margin;
    let mut out = Vec::with_capacity(h * w * c);
    for i in 0..h {
        let start = ((i + margin) * sw + margin) * c;
        out.extend_from_slice(&src[start..start + w * c]);
    }
    out
}

/// Zero-extend an `h x w` grid by `margin` on each side.
pub(crate) fn embed(src: &[f64], margin: usize, h: usize, w: usize, c: usize) -> Vec<f64> {
    let sw = w + 2 * margin;
    let mut out = vec![0.0; (h + 2 * margin) * sw * c];
    for i in 0..h {
        let start = ((i + margin) * sw + margin) * c;
        out[start..start + w * c].copy_from_slice(&src[i * w * c..(i + 1) * w * c]);
    }
    out
}

pub fn pyramid_cascaded(x: &FeatureMap, base_k: usize, levels: u32) -> Result<Pyramid> {
    pyramid_cascaded_counted(x, base_k, levels).map(|(p, _)| p)
}

/// [`pyramid_cascaded`] plus the tap counters.
pub fn pyramid_cascaded_counted(x: &FeatureMap, base_k: usize, levels: u32) -> Result<(Pyramid, PoolStats)> {
    check_pyramid(base_k, levels)?;
    let (h, w, c) = x.shape();
    let mut stats = PoolStats::default();
    let state = cascade_forward(x, base_k, levels, true, &mut stats);
    let out = state
        .margins
        .iter()
        .zip(state.sums.into_iter().zip(&state.counts))
        .map(|(&m, (s, n))| {
            // the last level has no halo, so its buffer is reused as is
            let mut s = if m == 0 { s } else { crop(&s, m, h, w, c) };
            let sw = w + 2 * m;
            for (i, row) in s.chunks_exact_mut(w * c).enumerate() {
                let nrow = &n[(i + m) * sw + m..][..w];
                for (px, n) in row.chunks_exact_mut(c).zip(nrow) {
                    px.iter_mut().for_each(|v| *v /= n);
                }
            }
            FeatureMap::from_parts(h, w, c, x.dtype(), s)
        })
        .collect();
    Ok((Pyramid { base_k, levels: out }, stats))
}

/// Evaluate a pyramid with either algorithm.
pub fn pyramid(x: &FeatureMap, base_k: usize, levels: u32, imp: PyramidImpl) -> Result<Pyramid> {
    match imp {
        PyramidImpl::Naive => pyramid_naive(x, base_k, levels),
        PyramidImpl::Cascaded => pyramid_cascaded(x, base_k, levels),
    }
}

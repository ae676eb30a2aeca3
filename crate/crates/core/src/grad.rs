//! Adjoints of the linear operators and a central finite-difference checker.
//!
//! Every forward operator in this crate is affine in its input, so each
//! backward pass is the exact transpose of the forward map. Zero-padded
//! window sums with symmetric offsets are self-adjoint, which lets most
//! adjoints reuse the forward window kernel.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::context::{branch_weights, ModuleConfig, PooledInputs, PooledSource};
use crate::conv::{align_corners_axis, tap_major, ConvSpec};
use crate::pooling::{
    cascade_forward, check_pyramid, count_map, crop, embed, window_sum, Norm, PoolSpec, PoolStats,
};
use crate::rng::SplitMix64;
use crate::tensor::{abs, DType, FeatureMap, WeightBank, WeightTensor};
use crate::{Error, Result};

fn expect_shape(m: &FeatureMap, h: usize, w: usize) -> Result<()> {
    if (m.h(), m.w()) != (h, w) {
        return Err(Error::SpatialMismatch(m.h(), m.w(), h, w));
    }
    Ok(())
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
}

/// Transpose of [`crate::pooling::pool`] for an `h x w` input.
pub fn avg_pool_backward(dy: &FeatureMap, h: usize, w: usize, spec: &PoolSpec) -> Result<FeatureMap> {
    expect_shape(dy, h, w)?;
    let c = dy.c();
    let mut scaled = dy.data().to_vec();
    match spec.norm() {
        Norm::Sum => {}
        Norm::AvgIncludePad => {
            let area = (spec.kernel() * spec.kernel()) as f64;
            scaled.iter_mut().for_each(|v| *v /= area);
        }
        Norm::AvgValidCount => {
            let counts = count_map(h, w, spec)?;
            for (px, n) in scaled.chunks_exact_mut(c).zip(counts.data()) {
                px.iter_mut().for_each(|v| *v /= n);
            }
        }
    }
    let mut taps = 0;
    let dx = window_sum(&scaled, (h, w), c, (h, w), 0, spec.kernel(), spec.dilation(), &mut taps);
    Ok(FeatureMap::from_parts(h, w, c, dy.dtype(), dx))
}

/// Gradients of a convolution with respect to input, weights and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub dx: FeatureMap,
    /// Same layout as [`WeightTensor::weights`].
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
}

pub fn conv2d_backward(dy: &FeatureMap, x: &FeatureMap, weights: &WeightTensor, spec: &ConvSpec) -> Result<ConvGrads> {
    let (h, w, in_c) = x.shape();
    let out_c = weights.out_c();
    expect_shape(dy, h, w)?;
    if dy.c() != out_c {
        return Err(Error::ChannelMismatch { expected: out_c, actual: dy.c() });
    }
    if weights.in_c() != in_c {
        return Err(Error::ChannelMismatch { expected: weights.in_c(), actual: in_c });
    }
    let (kh, kw) = (weights.kh(), weights.kw());
    let (rh, rw) = ((kh / 2) as isize, (kw / 2) as isize);
    let d = spec.dilation() as isize;
    let taps = tap_major(weights);
    let mut dx = vec![0.0; h * w * in_c];
    // tap-major accumulator, transposed back at the end
    let mut dw_t = vec![0.0; taps.len()];
    let mut db = vec![0.0; out_c];
    for g in dy.data().chunks_exact(out_c) {
        add_into(&mut db, g);
    }
    for i in 0..h {
        for j in 0..w {
            let g = dy.pixel(i, j);
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
                    let base = (y as usize * w + xx as usize) * in_c;
                    let block = (a * kw + b) * in_c * out_c;
                    for ci in 0..in_c {
                        let wrow = &taps[block + ci * out_c..][..out_c];
                        let mut s = 0.0;
                        for (wv, gv) in wrow.iter().zip(g) {
                            s += wv * gv;
                        }
                        dx[base + ci] += s;
                        let xv = x.data()[base + ci];
                        let drow = &mut dw_t[block + ci * out_c..][..out_c];
                        for (dv, gv) in drow.iter_mut().zip(g) {
                            *dv += xv * gv;
                        }
                    }
                }
            }
        }
    }
    let mut dw = vec![0.0; taps.len()];
    for o in 0..out_c {
        for ci in 0..in_c {
            for a in 0..kh {
                for b in 0..kw {
                    dw[weights.weight_index(o, ci, a, b)] = dw_t[((a * kw + b) * in_c + ci) * out_c + o];
                }
            }
        }
    }
    Ok(ConvGrads { dx: FeatureMap::from_parts(h, w, in_c, dy.dtype(), dx), dw, db })
}

/// Transpose of [`crate::conv::bilinear_upsample`] from `dy`'s size back to
/// `h x w`.
pub fn bilinear_upsample_backward(dy: &FeatureMap, h: usize, w: usize) -> Result<FeatureMap> {
    if h == 0 || w == 0 {
        return Err(Error::ZeroDimension { h, w, c: dy.c() });
    }
    let (oh, ow, c) = dy.shape();
    let rows = align_corners_axis(oh, h);
    let cols = align_corners_axis(ow, w);
    let mut dx = vec![0.0; h * w * c];
    for (i, &(y0, y1, fy)) in rows.iter().enumerate() {
        for (j, &(x0, x1, fx)) in cols.iter().enumerate() {
            let g = dy.pixel(i, j);
            let taps = [
                (y0, x0, (1.0 - fy) * (1.0 - fx)),
                (y0, x1, (1.0 - fy) * fx),
                (y1, x0, fy * (1.0 - fx)),
                (y1, x1, fy * fx),
            ];
            for (y, x, wt) in taps {
                let dst = &mut dx[(y * w + x) * c..][..c];
                dst.iter_mut().zip(g).for_each(|(d, v)| *d += wt * v);
            }
        }
    }
    Ok(FeatureMap::from_parts(h, w, c, dy.dtype(), dx))
}

fn check_level_grads(grads: &[FeatureMap]) -> Result<(usize, usize, usize)> {
    let first = grads.first().ok_or(Error::ZeroLevels)?;
    for g in &grads[1..] {
        first.check_same_shape(g)?;
    }
    Ok(first.shape())
}

/// Input gradient of the direct pyramid given one cotangent per level.
pub fn pyramid_naive_backward(grads: &[FeatureMap], base_k: usize) -> Result<FeatureMap> {
    let (h, w, c) = check_level_grads(grads)?;
    check_pyramid(base_k, grads.len() as u32)?;
    let mut dx = vec![0.0; h * w * c];
    let mut k = 1;
    for g in grads {
        k *= base_k;
        let part = avg_pool_backward(g, h, w, &PoolSpec::avg(k, 1)?)?;
        add_into(&mut dx, part.data());
    }
    Ok(FeatureMap::from_parts(h, w, c, grads[0].dtype(), dx))
}

/// Input gradient of the cascaded pyramid: the cascade run in reverse on
/// the same extended grids.
pub fn pyramid_cascaded_backward(grads: &[FeatureMap], base_k: usize) -> Result<FeatureMap> {
    let (h, w, c) = check_level_grads(grads)?;
    let levels = grads.len() as u32;
    check_pyramid(base_k, levels)?;
    let shape = FeatureMap::zeros(h, w, 1, DType::F64)?;
    let state = cascade_forward(&shape, base_k, levels, false, &mut PoolStats::default());
    let margins = &state.margins;
    let mut taps = 0;
    let mut carry: Vec<f64> = Vec::new();
    let mut carry_dims = (0, 0);
    for lvl in (0..levels as usize).rev() {
        let m = margins[lvl];
        let dims = (h + 2 * m, w + 2 * m);
        let counts = crop(&state.counts[lvl], m, h, w, 1);
        let mut local = grads[lvl].data().to_vec();
        for (px, n) in local.chunks_exact_mut(c).zip(&counts) {
            px.iter_mut().for_each(|v| *v /= n);
        }
        let mut cur = embed(&local, m, h, w, c);
        if !carry.is_empty() {
            let shift = margins[lvl + 1] as isize - m as isize;
            let d = base_k.pow(lvl as u32 + 1);
            let back = window_sum(&carry, carry_dims, c, dims, shift, base_k, d, &mut taps);
            add_into(&mut cur, &back);
        }
        carry = cur;
        carry_dims = dims;
    }
    let dx = window_sum(&carry, carry_dims, c, (h, w), margins[0] as isize, base_k, 1, &mut taps);
    Ok(FeatureMap::from_parts(h, w, c, grads[0].dtype(), dx))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchGrads {
    pub name: String,
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModuleGrads {
    pub dx: FeatureMap,
    /// In config branch order.
    pub branches: Vec<BranchGrads>,
}

/// Backward pass of [`crate::context::module_forward`].
pub fn module_backward(dy: &FeatureMap, x: &FeatureMap, cfg: &ModuleConfig, bank: &WeightBank) -> Result<ModuleGrads> {
    cfg.validate()?;
    let (h, w, c) = x.shape();
    expect_shape(dy, h, w)?;
    if dy.c() != cfg.out_channels() {
        return Err(Error::ChannelMismatch { expected: cfg.out_channels(), actual: dy.c() });
    }
    let weights = branch_weights(c, cfg, bank)?;
    let pooled = PooledInputs::compute(x, cfg)?;
    let oc = cfg.branch_out_c;
    let mut dx = vec![0.0; h * w * c];
    let mut pool_grads = vec![vec![0.0; h * w * c]; pooled.pools.len()];
    let mut level_grads = vec![vec![0.0; h * w * c]; pooled.levels.len()];
    let mut branches = Vec::with_capacity(cfg.branches.len());
    for (i, b) in cfg.branches.iter().enumerate() {
        let dy_b = dy.channel_block(i * oc, oc)?;
        let g = conv2d_backward(&dy_b, pooled.get(x, i), weights[i], &b.conv_spec()?)?;
        let target = match pooled.sources[i] {
            PooledSource::Input => &mut dx,
            PooledSource::Pool(p) => &mut pool_grads[p],
            PooledSource::Level(l) => &mut level_grads[l - 1],
        };
        add_into(target, g.dx.data());
        branches.push(BranchGrads { name: b.name.to_string(), dw: g.dw, db: g.db });
    }
    for ((spec, _), g) in pooled.pools.iter().zip(pool_grads) {
        let g = FeatureMap::from_parts(h, w, c, DType::F64, g);
        add_into(&mut dx, avg_pool_backward(&g, h, w, spec)?.data());
    }
    if let Some((base, _)) = pooled.pyramid {
        let grads: Vec<FeatureMap> =
            level_grads.into_iter().map(|g| FeatureMap::from_parts(h, w, c, DType::F64, g)).collect();
        add_into(&mut dx, pyramid_cascaded_backward(&grads, base)?.data());
    }
    Ok(ModuleGrads { dx: FeatureMap::from_parts(h, w, c, dy.dtype(), dx), branches })
}

/// Settings for [`finite_diff_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tol: f64,
    /// Coordinates probed; all of them when the input is smaller.
    pub max_probes: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { eps: 1e-5, tol: 1e-6, max_probes: 200, seed: 0x6772_6164 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub op_name: String,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub probes: usize,
    pub passed: bool,
}

/// Relative error with the denominator floored at `1e-8`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    abs(analytic - numeric) / abs(analytic).max(abs(numeric)).max(1e-8)
}

fn probe_indices(n: usize, max: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if n <= max {
        return idx;
    }
    let mut rng = SplitMix64::new(seed);
    for i in 0..max {
        let j = rng.next_range(i, n - 1);
        idx.swap(i, j);
    }
    idx.truncate(max);
    idx.sort_unstable();
    idx
}

/// Compare `analytic` against central differences of the scalar function
/// `f` around `params` on a seeded sample of coordinates.
pub fn finite_diff_check<F>(
    op_name: &str,
    params: &[f64],
    analytic: &[f64],
    mut f: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    if analytic.len() != params.len() {
        return Err(Error::LengthMismatch { expected: params.len(), actual: analytic.len() });
    }
    if !(cfg.eps > 0.0) {
        return Err(Error::InvalidArgument("eps must be positive".into()));
    }
    let non_finite = |index| Error::NonFinite { op: op_name.to_string(), index };
    let mut x = params.to_vec();
    let mut worst = (0.0, 0);
    let probes = probe_indices(params.len(), cfg.max_probes, cfg.seed);
    for &i in &probes {
        let orig = x[i];
        x[i] = orig + cfg.eps;
        let plus = f(&x);
        x[i] = orig - cfg.eps;
        let minus = f(&x);
        x[i] = orig;
        let numeric = (plus - minus) / (2.0 * cfg.eps);
        if !numeric.is_finite() {
            return Err(non_finite(i));
        }
        if !analytic[i].is_finite() {
            return Err(non_finite(i));
        }
        let err = relative_error(analytic[i], numeric);
        if err > worst.0 || probes.len() == 1 {
            worst = (err, i);
        }
    }
    Ok(GradCheckReport {
        op_name: op_name.to_string(),
        max_rel_err: worst.0,
        worst_index: worst.1,
        probes: probes.len(),
        passed: worst.0 <= cfg.tol,
    })
}

/// [`finite_diff_check`] over the elements of a feature map. The map is
/// promoted to `f64` so the perturbation is not rounded away.
pub fn finite_diff_check_map<F>(
    op_name: &str,
    x: &FeatureMap,
    analytic: &FeatureMap,
    mut f: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: FnMut(&FeatureMap) -> Result<f64>,
{
    x.check_same_shape(analytic)?;
    let (h, w, c) = x.shape();
    let mut failure = None;
    let report = finite_diff_check(
        op_name,
        x.data(),
        analytic.data(),
        |p| {
            let m = FeatureMap::from_parts(h, w, c, DType::F64, p.to_vec());
            f(&m).unwrap_or_else(|e| {
                failure.get_or_insert(e);
                f64::NAN
            })
        },
        cfg,
    );
    match failure {
        Some(e) => Err(e),
        None => report,
    }
}

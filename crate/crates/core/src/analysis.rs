//! Dependency footprints, utilization ratios and operation counts.
//!
//! The footprint of a module is the set of input positions that influence
//! one output descriptor. Per branch it is the Minkowski sum of the
//! convolution tap offsets and the pooling window offsets; the module's
//! footprint is the union over branches. The utilization ratio is
//! `r = u / (h * w)` with `u` the footprint size.
//!
//! Two counting conventions exist. `Unclipped` counts every offset, as if the
//! map were unbounded. `Clipped` counts the positions that actually reach a
//! given pixel of a finite map. Clipping happens per stage: a convolution
//! tap that falls outside the map reads zero padding, so the pooling window
//! behind it contributes nothing even where that window overlaps the map.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use crate::context::{constant_bank, module_forward, ModuleConfig};
use crate::pooling::{cascade_margins, check_pyramid, PoolSpec, PyramidImpl};
use crate::tensor::FeatureMap;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum FootprintMode {
    Unclipped,
    #[default]
    Clipped,
}

impl FootprintMode {
    pub fn name(self) -> &'static str {
        match self {
            FootprintMode::Unclipped => "unclipped",
            FootprintMode::Clipped => "clipped",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FootprintReport {
    pub u: usize,
    pub h: usize,
    pub w: usize,
    pub r: f64,
    pub mode: FootprintMode,
    pub pixel: (usize, usize),
}

/// Default pixel for clipped footprints.
pub fn center_pixel(h: usize, w: usize) -> (usize, usize) {
    (h / 2, w / 2)
}

fn axis_offsets(kernel: usize, dilation: usize) -> impl Iterator<Item = isize> {
    let r = (kernel / 2) as isize;
    let d = dilation as isize;
    (0..kernel as isize).map(move |a| d * (a - r))
}

/// Relative input offsets feeding one output descriptor.
pub fn footprint_offsets(cfg: &ModuleConfig) -> Result<BTreeSet<(isize, isize)>> {
    cfg.validate()?;
    let mut out = BTreeSet::new();
    for b in &cfg.branches {
        // square windows, so the 2-D Minkowski sum is a product of 1-D sums
        let axis: BTreeSet<isize> = axis_offsets(b.conv_kernel, b.conv_dilation)
            .flat_map(|c| axis_offsets(b.pool_kernel, b.pool_dilation).map(move |p| c + p))
            .collect();
        for &dy in &axis {
            for &dx in &axis {
                out.insert((dy, dx));
            }
        }
    }
    Ok(out)
}

fn check_pixel(h: usize, w: usize, pixel: (usize, usize)) -> Result<()> {
    if pixel.0 >= h || pixel.1 >= w {
        return Err(Error::PixelOutOfBounds { row: pixel.0, col: pixel.1, h, w });
    }
    Ok(())
}

fn clipped_axis(conv: &[isize], pool: &[isize], at: usize, len: usize) -> BTreeSet<usize> {
    let inside = |p: isize| (p >= 0 && p < len as isize).then_some(p);
    conv.iter()
        .filter_map(|&c| inside(at as isize + c))
        .flat_map(|q| pool.iter().filter_map(move |&o| inside(q + o)))
        .map(|p| p as usize)
        .collect()
}

/// In-map positions influencing the output at `pixel`.
pub fn footprint_positions(
    cfg: &ModuleConfig,
    h: usize,
    w: usize,
    pixel: (usize, usize),
) -> Result<BTreeSet<(usize, usize)>> {
    cfg.validate()?;
    check_pixel(h, w, pixel)?;
    let mut out = BTreeSet::new();
    for b in &cfg.branches {
        let conv: Vec<isize> = axis_offsets(b.conv_kernel, b.conv_dilation).collect();
        let pool: Vec<isize> = axis_offsets(b.pool_kernel, b.pool_dilation).collect();
        let rows = clipped_axis(&conv, &pool, pixel.0, h);
        let cols = clipped_axis(&conv, &pool, pixel.1, w);
        for &i in &rows {
            out.extend(cols.iter().map(|&j| (i, j)));
        }
    }
    Ok(out)
}

/// Descriptor count and utilization ratio. `pixel` defaults to the centre.
pub fn footprint(
    cfg: &ModuleConfig,
    h: usize,
    w: usize,
    pixel: Option<(usize, usize)>,
    mode: FootprintMode,
) -> Result<FootprintReport> {
    if h == 0 || w == 0 {
        return Err(Error::ZeroDimension { h, w, c: 1 });
    }
    let pixel = pixel.unwrap_or_else(|| center_pixel(h, w));
    let u = match mode {
        FootprintMode::Unclipped => footprint_offsets(cfg)?.len(),
        FootprintMode::Clipped => footprint_positions(cfg, h, w, pixel)?.len(),
    };
    Ok(FootprintReport { u, h, w, r: u as f64 / (h * w) as f64, mode, pixel })
}

/// Largest map side the brute-force oracle accepts.
pub const ORACLE_MAX_SIDE: usize = 129;

/// Brute-force footprint: run the module once per input position on an
/// impulse with all-ones single-channel weights and record which impulses
/// reach `pixel`. All weights and pooling coefficients are positive, so no
/// contribution can cancel.
pub fn footprint_oracle(
    cfg: &ModuleConfig,
    h: usize,
    w: usize,
    pixel: (usize, usize),
) -> Result<BTreeSet<(usize, usize)>> {
    Ok(footprint_oracle_many(cfg, h, w, &[pixel])?.remove(0))
}

/// [`footprint_oracle`] for several output pixels from one sweep.
pub fn footprint_oracle_many(
    cfg: &ModuleConfig,
    h: usize,
    w: usize,
    pixels: &[(usize, usize)],
) -> Result<Vec<BTreeSet<(usize, usize)>>> {
    if h > ORACLE_MAX_SIDE || w > ORACLE_MAX_SIDE {
        return Err(Error::InvalidArgument(format!(
            "oracle limited to {ORACLE_MAX_SIDE}x{ORACLE_MAX_SIDE}, got {h}x{w}"
        )));
    }
    for &p in pixels {
        check_pixel(h, w, p)?;
    }
    let mut probe = cfg.clone();
    probe.branch_out_c = 1;
    let bank = constant_bank(&probe, 1, 1.0)?;
    let mut out = alloc::vec![BTreeSet::new(); pixels.len()];
    for i in 0..h {
        for j in 0..w {
            let x = FeatureMap::impulse(h, w, 1, (i, j, 0))?;
            let y = module_forward(&x, &probe, &bank)?;
            for (set, &(pi, pj)) in out.iter_mut().zip(pixels) {
                if y.pixel(pi, pj).iter().any(|&v| v != 0.0) {
                    set.insert((i, j));
                }
            }
        }
    }
    Ok(out)
}

/// Arithmetic of one forward evaluation by the reference algorithms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CostModel {
    /// Window taps accumulated into data tensors, borders and halos included.
    pub pool_adds: u64,
    /// Window taps accumulated into count tensors.
    pub count_adds: u64,
    /// Pooling adds per element away from the border.
    pub pool_adds_per_element: u64,
    pub pool_divides: u64,
    pub conv_mults: u64,
}

/// Cost of a single pooling pass.
pub fn pool_op_count(spec: &PoolSpec, h: usize, w: usize, c: usize) -> CostModel {
    let k2 = (spec.kernel() * spec.kernel()) as u64;
    let n = (h * w * c) as u64;
    CostModel { pool_adds: n * k2, pool_adds_per_element: k2, pool_divides: n, ..Default::default() }
}

/// Cost of a pooling pyramid. The cascaded total includes the extended
/// grids that keep the border exact.
pub fn pyramid_op_count(
    base_k: usize,
    levels: u32,
    h: usize,
    w: usize,
    c: usize,
    imp: PyramidImpl,
) -> Result<CostModel> {
    check_pyramid(base_k, levels)?;
    let n = (h * w * c) as u64;
    let k2 = (base_k * base_k) as u64;
    let mut cost = CostModel { pool_divides: n * levels as u64, ..Default::default() };
    match imp {
        PyramidImpl::Naive => {
            let per: u64 = (1..=levels).map(|i| k2.pow(i)).sum();
            cost.pool_adds_per_element = per;
            cost.pool_adds = n * per;
        }
        PyramidImpl::Cascaded => {
            let area: u64 = cascade_margins(base_k, levels)
                .iter()
                .map(|&m| ((h + 2 * m) * (w + 2 * m)) as u64)
                .sum();
            cost.pool_adds_per_element = levels as u64 * k2;
            cost.pool_adds = c as u64 * k2 * area;
            cost.count_adds = k2 * area;
        }
    }
    Ok(cost)
}

/// Cost of [`module_forward`] on an `h x w x c` input.
pub fn op_count(cfg: &ModuleConfig, h: usize, w: usize, c: usize) -> Result<CostModel> {
    cfg.validate()?;
    let mut cost = CostModel::default();
    let geometry = cfg.pyramid_geometry();
    match geometry {
        Some((base, levels)) if cfg.uses_cascade() => {
            cost = pyramid_op_count(base, levels, h, w, c, PyramidImpl::Cascaded)?;
        }
        _ => {
            let mut seen: Vec<PoolSpec> = Vec::new();
            for b in cfg.branches.iter().filter(|b| b.pool_kernel > 1) {
                let spec = b.pool_spec()?;
                if seen.contains(&spec) {
                    continue;
                }
                seen.push(spec);
                let p = pool_op_count(&spec, h, w, c);
                cost.pool_adds += p.pool_adds;
                cost.pool_adds_per_element += p.pool_adds_per_element;
                cost.pool_divides += p.pool_divides;
            }
        }
    }
    cost.conv_mults = cfg
        .branches
        .iter()
        .map(|b| (b.conv_kernel * b.conv_kernel * c * cfg.branch_out_c * h * w) as u64)
        .sum();
    Ok(cost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::{BranchSpec, ModuleKind};
    use crate::pooling::{pyramid_cascaded_counted, pyramid_naive_counted};
    use crate::rng::rng_fill;
    use crate::DType;

    #[test]
    fn aspp_uses_25_descriptors() {
        let r = footprint(&ModuleConfig::aspp(), 65, 65, None, FootprintMode::Unclipped).unwrap();
        assert_eq!(r.u, 25);
        assert_eq!(r.r, 25.0 / 4225.0);
        assert!((r.r - 0.0059).abs() < 5e-5);
    }

    #[test]
    fn aspp_clipped_at_center_loses_the_widest_ring() {
        // rate 36 taps land at 32 +- 36, outside a 65-wide map
        let r = footprint(&ModuleConfig::aspp(), 65, 65, None, FootprintMode::Clipped).unwrap();
        assert_eq!(r.u, 17);
    }

    #[test]
    fn module_a_ratios() {
        let a5 = footprint(&ModuleConfig::module_a(5), 65, 65, None, FootprintMode::Unclipped).unwrap();
        let a9 = footprint(&ModuleConfig::module_a(9), 65, 65, None, FootprintMode::Unclipped).unwrap();
        assert_eq!((a5.u, a9.u), (625, 2025));
        assert!((a5.r - 0.148).abs() < 1e-3);
        assert!((a9.r - 0.479).abs() < 1e-3);
    }

    #[test]
    fn module_b_covers_65x65() {
        let cfg = ModuleConfig::module_b(PyramidImpl::Cascaded);
        let r = footprint(&cfg, 65, 65, Some((32, 32)), FootprintMode::Clipped).unwrap();
        assert_eq!((r.u, r.r), (4225, 1.0));
        // the widest branch spans 81 positions per axis
        assert_eq!(footprint_offsets(&cfg).unwrap().len(), 81 * 81);
    }

    #[test]
    fn taps_in_the_padding_carry_nothing() {
        // the 3x3 pool behind the tap at -1 overlaps row 0, but that tap reads padding
        let cfg = ModuleConfig {
            kind: ModuleKind::ModuleA,
            branches: alloc::vec![BranchSpec::new("b", 3, 3, 3)],
            pyramid_impl: PyramidImpl::Naive,
            include_image_level: false,
            branch_out_c: 1,
        };
        let got = footprint_positions(&cfg, 5, 5, (2, 2)).unwrap();
        let want: BTreeSet<_> = (1..4).flat_map(|i| (1..4).map(move |j| (i, j))).collect();
        assert_eq!(got, want);
        assert_eq!(footprint_oracle(&cfg, 5, 5, (2, 2)).unwrap(), want);
        assert_eq!(footprint(&cfg, 5, 5, None, FootprintMode::Unclipped).unwrap().u, 81);
    }

    #[test]
    fn module_b_centre_gap_on_33x33() {
        // only the centre tap of the 27-wide branch is inside, covering 3..=29
        let cfg = ModuleConfig::module_b(PyramidImpl::Cascaded);
        assert_eq!(footprint(&cfg, 33, 33, None, FootprintMode::Clipped).unwrap().u, 27 * 27);
    }

    #[test]
    fn pixel_out_of_bounds() {
        let r = footprint(&ModuleConfig::aspp(), 9, 9, Some((9, 0)), FootprintMode::Clipped);
        assert!(matches!(r, Err(Error::PixelOutOfBounds { .. })));
    }

    #[test]
    fn oracle_agrees_on_small_maps() {
        for cfg in [
            ModuleConfig::aspp(),
            ModuleConfig::aspp_plus(),
            ModuleConfig::module_a(3),
            ModuleConfig::module_b(PyramidImpl::Naive),
        ] {
            for pixel in [(0, 0), (4, 4), (2, 7)] {
                let sym = footprint_positions(&cfg, 9, 9, pixel).unwrap();
                let brute = footprint_oracle(&cfg, 9, 9, pixel).unwrap();
                assert_eq!(sym, brute, "{:?} {:?}", cfg.kind, pixel);
            }
        }
    }

    #[test]
    fn single_1x1_branch_sees_only_itself() {
        let cfg = ModuleConfig {
            kind: ModuleKind::Aspp,
            branches: alloc::vec![BranchSpec::new("only", 1, 1, 1)],
            pyramid_impl: PyramidImpl::Naive,
            include_image_level: false,
            branch_out_c: 1,
        };
        let expect: BTreeSet<_> = [(3, 2)].into_iter().collect();
        assert_eq!(footprint_oracle(&cfg, 7, 7, (3, 2)).unwrap(), expect);
        assert_eq!(footprint_positions(&cfg, 7, 7, (3, 2)).unwrap(), expect);
    }

    #[test]
    fn closed_form_costs() {
        let n = pyramid_op_count(3, 3, 10, 10, 1, PyramidImpl::Naive).unwrap();
        let c = pyramid_op_count(3, 3, 10, 10, 1, PyramidImpl::Cascaded).unwrap();
        assert_eq!(n.pool_adds_per_element, 819);
        assert_eq!(c.pool_adds_per_element, 27);
        let one = pool_op_count(&PoolSpec::avg(1, 1).unwrap(), 4, 4, 2);
        assert_eq!(one.pool_adds_per_element, 1);
    }

    #[test]
    fn counters_match_cost_model() {
        for (k, l) in [(3, 1), (3, 2), (3, 3), (5, 2)] {
            let x = rng_fill(2, 13, 17, 3, DType::F64);
            let (_, sn) = pyramid_naive_counted(&x, k, l).unwrap();
            let (_, sc) = pyramid_cascaded_counted(&x, k, l).unwrap();
            let cn = pyramid_op_count(k, l, 13, 17, 3, PyramidImpl::Naive).unwrap();
            let cc = pyramid_op_count(k, l, 13, 17, 3, PyramidImpl::Cascaded).unwrap();
            assert_eq!(sn.data_adds, cn.pool_adds);
            assert_eq!((sc.data_adds, sc.count_adds), (cc.pool_adds, cc.count_adds));
        }
    }

    #[test]
    fn aspp_and_module_b_conv_costs_match() {
        let a = op_count(&ModuleConfig::aspp_plus(), 33, 33, 16).unwrap();
        let b = op_count(&ModuleConfig::module_b(PyramidImpl::Naive), 33, 33, 16).unwrap();
        assert_eq!(a.conv_mults, b.conv_mults);
        assert_eq!(a.pool_adds, 0);
        assert_eq!(b.pool_adds_per_element, 819);
        let c = op_count(&ModuleConfig::module_b(PyramidImpl::Cascaded), 33, 33, 16).unwrap();
        assert_eq!(c.pool_adds_per_element, 27);
        let m = op_count(&ModuleConfig::module_a(5), 33, 33, 16).unwrap();
        assert_eq!(m.pool_adds_per_element, 25);
    }

    #[test]
    fn unclipped_is_translation_invariant() {
        let cfg = ModuleConfig::module_a(3);
        let a = footprint(&cfg, 33, 33, Some((0, 0)), FootprintMode::Unclipped).unwrap();
        let b = footprint(&cfg, 33, 33, Some((20, 5)), FootprintMode::Unclipped).unwrap();
        assert_eq!(a.u, b.u);
    }
}

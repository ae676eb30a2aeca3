//! Seeded self-check suites: naive vs cascaded equivalence, finite
//! differences for every backward pass, and adjoint identities.
//!
//! These back the CLI's `eq-check` and `gradcheck` subcommands and the
//! acceptance tests.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::context::{module_forward, random_bank, ModuleConfig};
use crate::conv::{bilinear_upsample, conv2d, ConvSpec};
use crate::grad::{
    avg_pool_backward, bilinear_upsample_backward, conv2d_backward, finite_diff_check, finite_diff_check_map,
    module_backward, pyramid_cascaded_backward, pyramid_naive_backward, GradCheckConfig, GradCheckReport,
};
use crate::pooling::{pool, pyramid_cascaded, pyramid_naive, Norm, PoolSpec, PyramidImpl};
use crate::rng::{rng_fill, SplitMix64};
use crate::tensor::{abs, DType, FeatureMap, WeightBank};
use crate::Result;

/// Elementwise tolerance for naive vs cascaded outputs.
pub const EQUIVALENCE_TOL: f64 = 1e-9;
/// Relative tolerance for adjoint identities.
pub const ADJOINT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub suite: &'static str,
    pub cases: usize,
    pub worst_abs_diff: f64,
    /// Description of the case that produced the worst difference.
    pub worst_case: String,
    pub tolerance: f64,
    pub passed: bool,
}

impl EquivalenceReport {
    fn new(suite: &'static str) -> Self {
        Self { suite, cases: 0, worst_abs_diff: 0.0, worst_case: String::new(), tolerance: EQUIVALENCE_TOL, passed: true }
    }

    fn record(&mut self, diff: f64, case: impl FnOnce() -> String) {
        self.cases += 1;
        // NaN must fail too
        if !(diff <= self.tolerance) {
            self.passed = false;
        }
        if !(diff <= self.worst_abs_diff) || self.cases == 1 {
            self.worst_abs_diff = diff;
            self.worst_case = case();
        }
    }
}

/// Random pyramids: `k` in {3, 5}, levels with `k^L <= 125`, `h, w` in
/// `1..=max_size`, `c` in `1..=max_channels`, f64 inputs in `[-1, 1)`.
pub fn pyramid_equivalence_suite(
    seed: u64,
    cases: usize,
    max_size: usize,
    max_channels: usize,
) -> Result<EquivalenceReport> {
    let mut rng = SplitMix64::new(seed);
    let mut report = EquivalenceReport::new("pyramid");
    for _ in 0..cases {
        let k = if rng.next_u64() & 1 == 0 { 3 } else { 5 };
        let levels = rng.next_range(1, 3) as u32;
        let h = rng.next_range(1, max_size.max(1));
        let w = rng.next_range(1, max_size.max(1));
        let c = rng.next_range(1, max_channels.max(1));
        let case_seed = rng.next_u64();
        let x = rng_fill(case_seed, h, w, c, DType::F64);
        let diff = pyramid_naive(&x, k, levels)?.max_abs_diff(&pyramid_cascaded(&x, k, levels)?);
        report.record(diff, || format!("k={k} L={levels} {h}x{w}x{c} seed={case_seed}"));
    }
    Ok(report)
}

/// Random Module B evaluations, naive vs cascaded, with random weights.
pub fn module_equivalence_suite(
    seed: u64,
    cases: usize,
    min_size: usize,
    max_size: usize,
    max_channels: usize,
) -> Result<EquivalenceReport> {
    let mut rng = SplitMix64::new(seed);
    let mut report = EquivalenceReport::new("module_b");
    for _ in 0..cases {
        let h = rng.next_range(min_size, max_size.max(min_size));
        let w = rng.next_range(min_size, max_size.max(min_size));
        let c = rng.next_range(1, max_channels.max(1));
        let out_c = rng.next_range(1, 4);
        let case_seed = rng.next_u64();
        let x = rng_fill(case_seed, h, w, c, DType::F64);
        let naive = ModuleConfig::module_b(PyramidImpl::Naive).with_branch_out_c(out_c);
        let casc = naive.clone().with_impl(PyramidImpl::Cascaded);
        let bank = random_bank(&naive, c, case_seed ^ 0xB0B)?;
        let diff = module_forward(&x, &naive, &bank)?.max_abs_diff(&module_forward(&x, &casc, &bank)?);
        report.record(diff, || format!("{h}x{w}x{c} out_c={out_c} seed={case_seed}"));
    }
    Ok(report)
}

fn levels_dot(levels: &[FeatureMap], cot: &[FeatureMap]) -> Result<f64> {
    levels.iter().zip(cot).map(|(a, b)| a.dot(b)).sum()
}

fn zero_bias_bank(bank: &WeightBank) -> WeightBank {
    bank.iter().map(|(n, t)| (n.into(), t.without_bias())).collect()
}

/// Finite-difference checks for every backward pass.
pub fn gradient_suite(cfg: &GradCheckConfig) -> Result<Vec<GradCheckReport>> {
    let mut out = Vec::new();

    let x = rng_fill(71, 9, 8, 2, DType::F64);
    let cot = rng_fill(72, 9, 8, 2, DType::F64);
    for (name, spec) in [
        ("avg_pool/valid_count", PoolSpec::new(3, 2, Norm::AvgValidCount)?),
        ("avg_pool/include_pad", PoolSpec::new(5, 1, Norm::AvgIncludePad)?),
        ("avg_pool/sum", PoolSpec::new(3, 3, Norm::Sum)?),
    ] {
        let g = avg_pool_backward(&cot, 9, 8, &spec)?;
        out.push(finite_diff_check_map(name, &x, &g, |m| pool(m, &spec).dot(&cot), cfg)?);
    }

    let x = rng_fill(51, 7, 7, 2, DType::F64);
    let wt = crate::WeightTensor::random(52, 2, 2, 3, 3, DType::F64)?;
    let spec = ConvSpec::new(2)?;
    let cot = rng_fill(53, 7, 7, 2, DType::F64);
    let g = conv2d_backward(&cot, &x, &wt, &spec)?;
    out.push(finite_diff_check_map("conv2d/dx", &x, &g.dx, |m| conv2d(m, &wt, &spec)?.dot(&cot), cfg)?);
    let bias = wt.bias().to_vec();
    out.push(finite_diff_check(
        "conv2d/dw",
        wt.weights(),
        &g.dw,
        |p| {
            let t = wt.with_values(p.to_vec(), bias.clone()).and_then(|t| conv2d(&x, &t, &spec));
            t.and_then(|y| y.dot(&cot)).unwrap_or(f64::NAN)
        },
        cfg,
    )?);
    let weights = wt.weights().to_vec();
    out.push(finite_diff_check(
        "conv2d/db",
        wt.bias(),
        &g.db,
        |p| {
            let t = wt.with_values(weights.clone(), p.to_vec()).and_then(|t| conv2d(&x, &t, &spec));
            t.and_then(|y| y.dot(&cot)).unwrap_or(f64::NAN)
        },
        cfg,
    )?);

    let x = rng_fill(81, 5, 4, 2, DType::F64);
    let cot = rng_fill(82, 13, 9, 2, DType::F64);
    let g = bilinear_upsample_backward(&cot, 5, 4)?;
    out.push(finite_diff_check_map("bilinear_upsample", &x, &g, |m| bilinear_upsample(m, 13, 9)?.dot(&cot), cfg)?);

    let x = rng_fill(91, 12, 10, 2, DType::F64);
    let cot: Vec<FeatureMap> = (0..2).map(|i| rng_fill(92 + i, 12, 10, 2, DType::F64)).collect();
    let g = pyramid_naive_backward(&cot, 3)?;
    out.push(finite_diff_check_map(
        "pyramid_naive",
        &x,
        &g,
        |m| levels_dot(pyramid_naive(m, 3, 2)?.levels(), &cot),
        cfg,
    )?);
    let g = pyramid_cascaded_backward(&cot, 3)?;
    out.push(finite_diff_check_map(
        "pyramid_cascaded",
        &x,
        &g,
        |m| levels_dot(pyramid_cascaded(m, 3, 2)?.levels(), &cot),
        cfg,
    )?);

    let x = rng_fill(61, 10, 10, 3, DType::F64);
    for (label, module) in [
        ("module_b/naive", ModuleConfig::module_b(PyramidImpl::Naive)),
        ("module_b/cascaded", ModuleConfig::module_b(PyramidImpl::Cascaded)),
        ("module_a", ModuleConfig::module_a(3)),
        ("aspp_plus", ModuleConfig::aspp_plus()),
    ] {
        let module = module.with_branch_out_c(2);
        let bank = random_bank(&module, 3, 62)?;
        let cot = rng_fill(63, 10, 10, module.out_channels(), DType::F64);
        let g = module_backward(&cot, &x, &module, &bank)?;
        let fwd = |m: &FeatureMap, b: &WeightBank| module_forward(m, &module, b).and_then(|y| y.dot(&cot));
        out.push(finite_diff_check_map(&format!("{label}/dx"), &x, &g.dx, |m| fwd(m, &bank), cfg)?);
        for bg in &g.branches {
            let t = bank.get(&bg.name).expect("bank built from the same config");
            let mut probe = bank.clone();
            out.push(finite_diff_check(
                &format!("{label}/{}/dw", bg.name),
                t.weights(),
                &bg.dw,
                |p| {
                    probe.insert(bg.name.clone(), t.with_values(p.to_vec(), t.bias().to_vec()).expect("same shape"));
                    fwd(&x, &probe).unwrap_or(f64::NAN)
                },
                cfg,
            )?);
            let mut probe = bank.clone();
            out.push(finite_diff_check(
                &format!("{label}/{}/db", bg.name),
                t.bias(),
                &bg.db,
                |p| {
                    probe.insert(bg.name.clone(), t.with_values(t.weights().to_vec(), p.to_vec()).expect("same shape"));
                    fwd(&x, &probe).unwrap_or(f64::NAN)
                },
                cfg,
            )?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjointReport {
    pub op_name: String,
    /// `<F u, v>`
    pub forward: f64,
    /// `<u, F^T v>`
    pub adjoint: f64,
    pub rel_err: f64,
    pub passed: bool,
}

fn adjoint_report(op_name: String, forward: f64, adjoint: f64) -> AdjointReport {
    let rel_err = abs(forward - adjoint) / abs(forward).max(abs(adjoint)).max(f64::MIN_POSITIVE);
    AdjointReport { op_name, forward, adjoint, rel_err, passed: rel_err <= ADJOINT_TOL }
}

/// `<F u, v> = <u, F^T v>` for every linear operator, random `u`, `v`.
pub fn adjoint_suite(seed: u64) -> Result<Vec<AdjointReport>> {
    let mut rng = SplitMix64::new(seed);
    let mut next = || rng.next_u64();
    let mut out = Vec::new();

    for norm in [Norm::Sum, Norm::AvgValidCount, Norm::AvgIncludePad] {
        for (k, d) in [(3, 1), (5, 2), (9, 3)] {
            let spec = PoolSpec::new(k, d, norm)?;
            let u = rng_fill(next(), 11, 13, 3, DType::F64);
            let v = rng_fill(next(), 11, 13, 3, DType::F64);
            let fu = pool(&u, &spec).dot(&v)?;
            let ftv = u.dot(&avg_pool_backward(&v, 11, 13, &spec)?)?;
            out.push(adjoint_report(format!("pool/{norm:?}/k{k}d{d}"), fu, ftv));
        }
    }

    for d in [1, 2, 5] {
        let wt = crate::WeightTensor::random(next(), 4, 3, 3, 3, DType::F64)?.without_bias();
        let spec = ConvSpec::new(d)?;
        let u = rng_fill(next(), 12, 9, 3, DType::F64);
        let v = rng_fill(next(), 12, 9, 4, DType::F64);
        let fu = conv2d(&u, &wt, &spec)?.dot(&v)?;
        let ftv = u.dot(&conv2d_backward(&v, &u, &wt, &spec)?.dx)?;
        out.push(adjoint_report(format!("conv2d/d{d}"), fu, ftv));
    }

    for (oh, ow) in [(17, 9), (5, 4), (1, 3)] {
        let u = rng_fill(next(), 5, 4, 2, DType::F64);
        let v = rng_fill(next(), oh, ow, 2, DType::F64);
        let fu = bilinear_upsample(&u, oh, ow)?.dot(&v)?;
        let ftv = u.dot(&bilinear_upsample_backward(&v, 5, 4)?)?;
        out.push(adjoint_report(format!("bilinear_upsample/{oh}x{ow}"), fu, ftv));
    }

    for (k, levels) in [(3, 3), (5, 2)] {
        let u = rng_fill(next(), 14, 19, 2, DType::F64);
        let v: Vec<FeatureMap> = (0..levels).map(|_| rng_fill(next(), 14, 19, 2, DType::F64)).collect();
        let naive = levels_dot(pyramid_naive(&u, k, levels as u32)?.levels(), &v)?;
        let casc = levels_dot(pyramid_cascaded(&u, k, levels as u32)?.levels(), &v)?;
        out.push(adjoint_report(format!("pyramid_naive/k{k}L{levels}"), naive, u.dot(&pyramid_naive_backward(&v, k)?)?));
        out.push(adjoint_report(
            format!("pyramid_cascaded/k{k}L{levels}"),
            casc,
            u.dot(&pyramid_cascaded_backward(&v, k)?)?,
        ));
    }

    for module in [
        ModuleConfig::aspp(),
        ModuleConfig::aspp_plus(),
        ModuleConfig::module_a(5),
        ModuleConfig::module_b(PyramidImpl::Naive),
        ModuleConfig::module_b(PyramidImpl::Cascaded),
    ] {
        let module = module.with_branch_out_c(2);
        let bank = zero_bias_bank(&random_bank(&module, 3, next())?);
        let u = rng_fill(next(), 20, 17, 3, DType::F64);
        let v = rng_fill(next(), 20, 17, module.out_channels(), DType::F64);
        let fu = module_forward(&u, &module, &bank)?.dot(&v)?;
        let ftv = u.dot(&module_backward(&v, &u, &module, &bank)?.dx)?;
        let label = format!("module/{}/{}", module.kind.name(), module.pyramid_impl.name());
        out.push(adjoint_report(label, fu, ftv));
    }
    Ok(out)
}

/// Largest difference between naive and cascaded module input gradients.
pub fn module_gradient_agreement(seed: u64, h: usize, w: usize, c: usize) -> Result<f64> {
    let naive = ModuleConfig::module_b(PyramidImpl::Naive).with_branch_out_c(2);
    let casc = naive.clone().with_impl(PyramidImpl::Cascaded);
    let bank = random_bank(&naive, c, seed)?;
    let x = rng_fill(seed ^ 1, h, w, c, DType::F64);
    let dy = rng_fill(seed ^ 2, h, w, naive.out_channels(), DType::F64);
    let a = module_backward(&dy, &x, &naive, &bank)?;
    let b = module_backward(&dy, &x, &casc, &bank)?;
    let mut worst = a.dx.max_abs_diff(&b.dx);
    for (ga, gb) in a.branches.iter().zip(&b.branches) {
        for (p, q) in ga.dw.iter().zip(&gb.dw).chain(ga.db.iter().zip(&gb.db)) {
            worst = worst.max(abs(p - q));
        }
    }
    Ok(worst)
}

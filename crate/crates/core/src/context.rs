//! Context modules: ASPP, ASPP with a 3x3 first branch, Module A (shared
//! `k x k` pooling before the ASPP convolutions) and Module B (vortex
//! pooling, kernels 1/3/9/27) in naive or cascaded form.
//!
//! A module is a list of branches. Each branch average-pools the input
//! (valid-count normalization, stride 1) and convolves the result; the
//! branch outputs are concatenated along channels in branch order. Branch
//! weights are looked up in a [`WeightBank`] by branch name.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::conv::{bilinear_upsample, broadcast_spatial, conv2d, ConvSpec};
use crate::pooling::{avg_pool, global_avg_pool, pyramid_cascaded, PoolSpec, PyramidImpl};
use crate::tensor::{concat_channels, FeatureMap, WeightBank, WeightTensor};
use crate::{Error, Result};

/// ASPP atrous rates for the three 3x3 branches.
pub const ASPP_RATES: [usize; 3] = [12, 24, 36];
/// Vortex pooling kernels, a geometric sequence with ratio 3.
pub const VORTEX_KERNELS: [usize; 4] = [1, 3, 9, 27];
/// Bank entry used for the image-level 1x1 projection.
pub const IMAGE_LEVEL: &str = "image_level";
/// Bank entry used for the segmentation head projection.
pub const HEAD: &str = "head";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModuleKind {
    Aspp,
    AsppPlus,
    ModuleA,
    ModuleB,
}

impl ModuleKind {
    pub fn name(self) -> &'static str {
        match self {
            ModuleKind::Aspp => "aspp",
            ModuleKind::AsppPlus => "aspp_plus",
            ModuleKind::ModuleA => "module_a",
            ModuleKind::ModuleB => "module_b",
        }
    }
}

impl core::str::FromStr for ModuleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aspp" => Ok(ModuleKind::Aspp),
            "aspp_plus" => Ok(ModuleKind::AsppPlus),
            "module_a" => Ok(ModuleKind::ModuleA),
            "module_b" => Ok(ModuleKind::ModuleB),
            other => Err(Error::InvalidConfig(format!("unknown module kind `{other}`"))),
        }
    }
}

/// One pool + conv branch. `pool_kernel == 1` means no pooling.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BranchSpec {
    pub name: String,
    pub pool_kernel: usize,
    pub pool_dilation: usize,
    pub conv_kernel: usize,
    pub conv_dilation: usize,
}

impl BranchSpec {
    pub fn new(name: impl Into<String>, pool_kernel: usize, conv_kernel: usize, conv_dilation: usize) -> Self {
        Self { name: name.into(), pool_kernel, pool_dilation: 1, conv_kernel, conv_dilation }
    }

    pub fn pool_spec(&self) -> Result<PoolSpec> {
        PoolSpec::avg(self.pool_kernel, self.pool_dilation)
    }

    pub fn conv_spec(&self) -> Result<ConvSpec> {
        ConvSpec::new(self.conv_dilation)
    }

    fn shape(&self) -> (usize, usize, usize, usize) {
        (self.pool_kernel, self.pool_dilation, self.conv_kernel, self.conv_dilation)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModuleConfig {
    pub kind: ModuleKind,
    pub branches: Vec<BranchSpec>,
    /// Only consulted for [`ModuleKind::ModuleB`].
    pub pyramid_impl: PyramidImpl,
    pub include_image_level: bool,
    pub branch_out_c: usize,
}

pub const DEFAULT_BRANCH_OUT_C: usize = 256;

fn aspp_branches(first_kernel: usize, pool_kernel: usize) -> Vec<BranchSpec> {
    let mut v = vec![BranchSpec::new(
        if first_kernel == 1 { "conv1x1" } else { "conv3x3" },
        pool_kernel,
        first_kernel,
        1,
    )];
    v.extend(ASPP_RATES.iter().map(|&r| BranchSpec::new(format!("atrous{r}"), pool_kernel, 3, r)));
    v
}

impl ModuleConfig {
    pub fn aspp() -> Self {
        Self::with_branches(ModuleKind::Aspp, aspp_branches(1, 1))
    }

    pub fn aspp_plus() -> Self {
        Self::with_branches(ModuleKind::AsppPlus, aspp_branches(3, 1))
    }

    pub fn module_a(pool_kernel: usize) -> Self {
        Self::with_branches(ModuleKind::ModuleA, aspp_branches(1, pool_kernel))
    }

    /// Vortex pooling: pool kernels 1, 3, 9, 27, each followed by a 3x3
    /// convolution whose dilation equals the pool kernel.
    pub fn module_b(pyramid_impl: PyramidImpl) -> Self {
        let branches = VORTEX_KERNELS.iter().map(|&k| BranchSpec::new(format!("pool{k}"), k, 3, k)).collect();
        Self { pyramid_impl, ..Self::with_branches(ModuleKind::ModuleB, branches) }
    }

    fn with_branches(kind: ModuleKind, branches: Vec<BranchSpec>) -> Self {
        Self {
            kind,
            branches,
            pyramid_impl: PyramidImpl::default(),
            include_image_level: true,
            branch_out_c: DEFAULT_BRANCH_OUT_C,
        }
    }

    pub fn with_branch_out_c(mut self, c: usize) -> Self {
        self.branch_out_c = c;
        self
    }

    pub fn with_impl(mut self, imp: PyramidImpl) -> Self {
        self.pyramid_impl = imp;
        self
    }

    /// Channels produced by [`module_forward`].
    pub fn out_channels(&self) -> usize {
        self.branch_out_c * self.branches.len()
    }

    /// Per-branch sanity: odd kernels, positive dilations, unique names.
    /// This is all the kernels need; see [`ModuleConfig::check_layout`] for
    /// the branch set each kind is defined by.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.branches.is_empty() {
            return bad("no branches".into());
        }
        if self.branch_out_c == 0 {
            return bad("branch_out_c must be positive".into());
        }
        for (i, b) in self.branches.iter().enumerate() {
            if b.name.is_empty() {
                return bad(format!("branch {i} has an empty name"));
            }
            if self.branches[..i].iter().any(|o| o.name == b.name) {
                return bad(format!("duplicate branch name `{}`", b.name));
            }
            if b.pool_kernel % 2 == 0 || b.pool_dilation == 0 || b.conv_dilation == 0 {
                return bad(format!("branch `{}`: kernels must be odd and dilations positive", b.name));
            }
            if b.conv_kernel != 1 && b.conv_kernel != 3 {
                return bad(format!("branch `{}`: conv_kernel must be 1 or 3", b.name));
            }
        }
        Ok(())
    }

    /// Check that the branches are exactly the set that defines `kind`
    /// (in any order).
    pub fn check_layout(&self) -> Result<()> {
        self.validate()?;
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let mut got: Vec<_> = self.branches.iter().map(BranchSpec::shape).collect();
        let mut expected: Vec<(usize, usize, usize, usize)> = match self.kind {
            ModuleKind::Aspp => aspp_branches(1, 1).iter().map(BranchSpec::shape).collect(),
            ModuleKind::AsppPlus => aspp_branches(3, 1).iter().map(BranchSpec::shape).collect(),
            ModuleKind::ModuleA => {
                let k = self.branches[0].pool_kernel;
                aspp_branches(1, k).iter().map(BranchSpec::shape).collect()
            }
            ModuleKind::ModuleB => VORTEX_KERNELS.iter().map(|&k| (k, 1, 3, k)).collect(),
        };
        // branch order is free; channel blocks follow it
        got.sort_unstable();
        expected.sort_unstable();
        if got != expected {
            return bad(format!(
                "{} expects branches (pool_kernel, pool_dilation, conv_kernel, conv_dilation) {:?}, got {:?}",
                self.kind.name(),
                expected,
                got
            ));
        }
        Ok(())
    }

    /// Pyramid geometry `(base, levels)` if every pooled branch uses a power
    /// of one base kernel with dilation 1.
    pub(crate) fn pyramid_geometry(&self) -> Option<(usize, u32)> {
        let base = self.branches.iter().map(|b| b.pool_kernel).filter(|&k| k > 1).min()?;
        let mut levels = 0;
        for b in &self.branches {
            if b.pool_kernel == 1 {
                continue;
            }
            if b.pool_dilation != 1 {
                return None;
            }
            let mut k = b.pool_kernel;
            let mut e = 0;
            while k % base == 0 {
                k /= base;
                e += 1;
            }
            if k != 1 {
                return None;
            }
            levels = levels.max(e);
        }
        Some((base, levels))
    }

    pub(crate) fn uses_cascade(&self) -> bool {
        self.kind == ModuleKind::ModuleB && self.pyramid_impl == PyramidImpl::Cascaded
    }
}

/// Which pooled map a branch reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum PooledSource {
    Input,
    /// Index into the distinct-pool list.
    Pool(usize),
    /// Pyramid level (1-based).
    Level(usize),
}

/// Pooled inputs for every branch, sharing identical pooling work.
pub(crate) struct PooledInputs {
    pub sources: Vec<PooledSource>,
    pub pools: Vec<(PoolSpec, FeatureMap)>,
    pub levels: Vec<FeatureMap>,
    pub pyramid: Option<(usize, u32)>,
}

impl PooledInputs {
    pub fn compute(x: &FeatureMap, cfg: &ModuleConfig) -> Result<Self> {
        let mut out = Self { sources: Vec::new(), pools: Vec::new(), levels: Vec::new(), pyramid: None };
        if cfg.uses_cascade() {
            let (base, levels) = cfg
                .pyramid_geometry()
                .ok_or_else(|| Error::InvalidConfig("cascaded pooling needs geometric kernels".into()))?;
            out.levels = pyramid_cascaded(x, base, levels)?.into_levels();
            out.pyramid = Some((base, levels));
            for b in &cfg.branches {
                let src = if b.pool_kernel == 1 {
                    PooledSource::Input
                } else {
                    let mut e = 0;
                    let mut k = b.pool_kernel;
                    while k > 1 {
                        k /= base;
                        e += 1;
                    }
                    PooledSource::Level(e)
                };
                out.sources.push(src);
            }
            return Ok(out);
        }
        for b in &cfg.branches {
            if b.pool_kernel == 1 {
                out.sources.push(PooledSource::Input);
                continue;
            }
            let spec = b.pool_spec()?;
            let idx = match out.pools.iter().position(|(s, _)| *s == spec) {
                Some(i) => i,
                None => {
                    out.pools.push((spec, avg_pool(x, &spec)?));
                    out.pools.len() - 1
                }
            };
            out.sources.push(PooledSource::Pool(idx));
        }
        Ok(out)
    }

    pub fn get<'a>(&'a self, x: &'a FeatureMap, branch: usize) -> &'a FeatureMap {
        match self.sources[branch] {
            PooledSource::Input => x,
            PooledSource::Pool(i) => &self.pools[i].1,
            PooledSource::Level(l) => &self.levels[l - 1],
        }
    }
}

/// Evaluate a context module: pool, convolve and concatenate every branch.
/// The output has `branch_out_c * branches` channels.
pub fn module_forward(x: &FeatureMap, cfg: &ModuleConfig, bank: &WeightBank) -> Result<FeatureMap> {
    cfg.validate()?;
    let weights = branch_weights(x.c(), cfg, bank)?;
    let pooled = PooledInputs::compute(x, cfg)?;
    let outputs = cfg
        .branches
        .iter()
        .enumerate()
        .map(|(i, b)| conv2d(pooled.get(x, i), weights[i], &b.conv_spec()?))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&FeatureMap> = outputs.iter().collect();
    concat_channels(&refs)
}

pub(crate) fn branch_weights<'a>(
    in_c: usize,
    cfg: &ModuleConfig,
    bank: &'a WeightBank,
) -> Result<Vec<&'a WeightTensor>> {
    cfg.branches
        .iter()
        .map(|b| bank.require(&b.name, in_c, cfg.branch_out_c, b.conv_kernel))
        .collect()
}

/// Global average pool, 1x1 projection, broadcast back to `h x w`.
pub fn image_level_feature(x: &FeatureMap, weights: &WeightTensor, h: usize, w: usize) -> Result<FeatureMap> {
    if weights.in_c() != x.c() {
        return Err(Error::ChannelMismatch { expected: weights.in_c(), actual: x.c() });
    }
    if weights.kh() != 1 || weights.kw() != 1 {
        return Err(Error::WeightShape { name: IMAGE_LEVEL.into(), reason: "projection must be 1x1".into() });
    }
    let v = global_avg_pool(x);
    let y: Vec<f64> = (0..weights.out_c())
        .map(|o| {
            let s: f64 = v.iter().enumerate().map(|(ci, m)| weights.weight(o, ci, 0, 0) * m).sum();
            weights.bias()[o] + s
        })
        .collect();
    broadcast_spatial(&y, h, w, x.dtype())
}

/// Final 1x1 projection and output size of the segmentation head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadConfig {
    pub proj: WeightTensor,
    pub out_h: usize,
    pub out_w: usize,
}

impl HeadConfig {
    pub fn new(proj: WeightTensor, out_h: usize, out_w: usize) -> Result<Self> {
        if proj.kh() != 1 || proj.kw() != 1 {
            return Err(Error::WeightShape { name: HEAD.into(), reason: "projection must be 1x1".into() });
        }
        if out_h == 0 || out_w == 0 {
            return Err(Error::ZeroDimension { h: out_h, w: out_w, c: proj.out_c() });
        }
        Ok(Self { proj, out_h, out_w })
    }
}

/// Concatenate the module output with the image-level feature (if any),
/// project with a 1x1 convolution and upsample to the head's output size.
pub fn seg_head(y: &FeatureMap, image_level: Option<&FeatureMap>, head: &HeadConfig) -> Result<FeatureMap> {
    let joined;
    let input = match image_level {
        Some(g) => {
            joined = concat_channels(&[y, g])?;
            &joined
        }
        None => y,
    };
    if head.proj.in_c() != input.c() {
        return Err(Error::ChannelMismatch { expected: head.proj.in_c(), actual: input.c() });
    }
    let logits = conv2d(input, &head.proj, &ConvSpec::default())?;
    bilinear_upsample(&logits, head.out_h, head.out_w)
}

/// Per-position class indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub h: usize,
    pub w: usize,
    pub labels: Vec<u32>,
}

impl LabelMap {
    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.labels[i * self.w + j]
    }
}

/// Index of the largest channel at each position; ties go to the lowest
/// index.
pub fn argmax_labels(logits: &FeatureMap) -> LabelMap {
    let labels = logits
        .data()
        .chunks_exact(logits.c())
        .map(|px| {
            let mut best = 0;
            for (k, v) in px.iter().enumerate().skip(1) {
                if *v > px[best] {
                    best = k;
                }
            }
            best as u32
        })
        .collect();
    LabelMap { h: logits.h(), w: logits.w(), labels }
}

/// A bank with `WeightTensor::random(seed + i, ...)` for branch `i`.
pub fn random_bank(cfg: &ModuleConfig, in_c: usize, seed: u64) -> Result<WeightBank> {
    cfg.branches
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let t = WeightTensor::random(
                seed.wrapping_add(i as u64),
                cfg.branch_out_c,
                in_c,
                b.conv_kernel,
                b.conv_kernel,
                crate::DType::F64,
            )?;
            Ok((b.name.to_string(), t))
        })
        .collect()
}

/// A bank with every weight set to `value` and zero biases.
pub fn constant_bank(cfg: &ModuleConfig, in_c: usize, value: f64) -> Result<WeightBank> {
    cfg.branches
        .iter()
        .map(|b| {
            let t = WeightTensor::filled(cfg.branch_out_c, in_c, b.conv_kernel, b.conv_kernel, value, 0.0)?;
            Ok((b.name.to_string(), t))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_fill;
    use crate::DType;

    fn all_configs() -> Vec<ModuleConfig> {
        vec![
            ModuleConfig::aspp(),
            ModuleConfig::aspp_plus(),
            ModuleConfig::module_a(5),
            ModuleConfig::module_b(PyramidImpl::Naive),
            ModuleConfig::module_b(PyramidImpl::Cascaded),
        ]
    }

    #[test]
    fn presets_validate() {
        for cfg in all_configs() {
            cfg.check_layout().unwrap();
        }
        let mut bad = ModuleConfig::module_b(PyramidImpl::Naive);
        bad.branches[2].conv_dilation = 24;
        assert!(bad.validate().is_ok());
        assert!(matches!(bad.check_layout(), Err(Error::InvalidConfig(_))));
        bad.branches[2].pool_kernel = 4;
        assert!(bad.validate().is_err());
        let mut dup = ModuleConfig::aspp();
        dup.branches[1].name = "conv1x1".into();
        assert!(dup.validate().is_err());
    }

    #[test]
    fn module_b_constant_interior() {
        let cfg = ModuleConfig::module_b(PyramidImpl::Naive).with_branch_out_c(2);
        let x = FeatureMap::filled(90, 90, 1, DType::F64, 0.5).unwrap();
        let bank = constant_bank(&cfg, 1, 1.0).unwrap();
        let y = module_forward(&x, &cfg, &bank).unwrap();
        assert_eq!(y.c(), 8);
        // dilation 27 taps stay inside for rows 27..63
        for i in [27, 45, 62] {
            for j in [27, 40, 62] {
                assert!(y.pixel(i, j).iter().all(|&v| (v - 4.5).abs() < 1e-12));
            }
        }
        assert!(y.get(0, 0, 0) < 4.5);
    }

    #[test]
    fn naive_and_cascaded_modules_agree() {
        let x = rng_fill(21, 40, 40, 8, DType::F64);
        let naive = ModuleConfig::module_b(PyramidImpl::Naive).with_branch_out_c(4);
        let casc = naive.clone().with_impl(PyramidImpl::Cascaded);
        let bank = random_bank(&naive, 8, 100).unwrap();
        let a = module_forward(&x, &naive, &bank).unwrap();
        let b = module_forward(&x, &casc, &bank).unwrap();
        assert!(a.max_abs_diff(&b) <= 1e-9);
    }

    #[test]
    fn aspp_zero_branches_vanish() {
        let c = 3;
        let cfg = ModuleConfig::aspp().with_branch_out_c(c);
        let mut bank = constant_bank(&cfg, c, 0.0).unwrap();
        bank.insert("conv1x1", WeightTensor::identity(c).unwrap());
        let x = rng_fill(5, 9, 9, c, DType::F64);
        let y = module_forward(&x, &cfg, &bank).unwrap();
        assert_eq!(y.channel_block(0, c).unwrap(), x);
        assert!(y.channel_block(c, 3 * c).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn missing_and_mismatched_weights() {
        let cfg = ModuleConfig::aspp().with_branch_out_c(2);
        let mut bank = random_bank(&cfg, 3, 1).unwrap();
        let x = rng_fill(5, 6, 6, 3, DType::F64);
        let y4 = rng_fill(5, 6, 6, 4, DType::F64);
        assert!(matches!(module_forward(&y4, &cfg, &bank), Err(Error::WeightShape { .. })));
        bank.remove("atrous24");
        assert_eq!(module_forward(&x, &cfg, &bank), Err(Error::MissingWeights("atrous24".into())));
    }

    #[test]
    fn branch_locality_and_permutation() {
        let cfg = ModuleConfig::module_a(3).with_branch_out_c(2);
        let x = rng_fill(8, 12, 11, 2, DType::F64);
        let bank = random_bank(&cfg, 2, 50).unwrap();
        let full = module_forward(&x, &cfg, &bank).unwrap();

        let mut zeroed = bank.clone();
        let t = zeroed.get("atrous12").unwrap().zeroed();
        zeroed.insert("atrous12", t);
        let y = module_forward(&x, &cfg, &zeroed).unwrap();
        for blk in 0..4 {
            let a = y.channel_block(blk * 2, 2).unwrap();
            if blk == 1 {
                assert!(a.data().iter().all(|&v| v == 0.0));
            } else {
                assert_eq!(a, full.channel_block(blk * 2, 2).unwrap());
            }
        }

        let mut perm = cfg.clone();
        perm.branches.swap(0, 3);
        perm.branches.swap(1, 2);
        let y = module_forward(&x, &perm, &bank).unwrap();
        for (blk, src) in [3, 2, 1, 0].into_iter().enumerate() {
            assert_eq!(y.channel_block(blk * 2, 2).unwrap(), full.channel_block(src * 2, 2).unwrap());
        }
    }

    #[test]
    fn image_level_cases() {
        let x = FeatureMap::filled(4, 3, 2, DType::F64, 0.25).unwrap();
        let y = image_level_feature(&x, &WeightTensor::identity(2).unwrap(), 4, 3).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.25));

        let x = rng_fill(9, 5, 4, 3, DType::F64);
        let means = global_avg_pool(&x);
        let w = WeightTensor::filled(1, 3, 1, 1, 1.0, 0.5).unwrap();
        let y = image_level_feature(&x, &w, 2, 2).unwrap();
        let expect = means.iter().sum::<f64>() + 0.5;
        assert!(y.data().iter().all(|&v| (v - expect).abs() < 1e-15));
    }

    #[test]
    fn seg_head_passthrough_and_constant() {
        let y = rng_fill(2, 5, 5, 1, DType::F64);
        let head = HeadConfig::new(WeightTensor::identity(1).unwrap(), 5, 5).unwrap();
        assert_eq!(seg_head(&y, None, &head).unwrap(), y);

        let y = FeatureMap::filled(3, 3, 2, DType::F64, 1.0).unwrap();
        let g = FeatureMap::filled(3, 3, 1, DType::F64, 2.0).unwrap();
        let proj = WeightTensor::new(2, 3, 1, 1, DType::F64, vec![1.0, 1.0, 1.0, 0.0, 0.0, -1.0], vec![0.5, 0.0])
            .unwrap();
        let out = seg_head(&y, Some(&g), &HeadConfig::new(proj, 7, 5).unwrap()).unwrap();
        assert!(out.data().chunks(2).all(|p| p == [4.5, -2.0]));
        let bad = HeadConfig::new(WeightTensor::identity(2).unwrap(), 3, 3).unwrap();
        assert!(seg_head(&y, Some(&g), &bad).is_err());
    }

    #[test]
    fn argmax_rules() {
        let one = rng_fill(1, 3, 3, 1, DType::F64);
        assert!(argmax_labels(&one).labels.iter().all(|&l| l == 0));
        let two = FeatureMap::new(1, 2, 2, DType::F64, vec![0.0, 1.0, -3.0, 2.0]).unwrap();
        assert_eq!(argmax_labels(&two).labels, vec![1, 1]);
        let tie = FeatureMap::new(1, 1, 2, DType::F64, vec![0.5, 0.5]).unwrap();
        assert_eq!(argmax_labels(&tie).labels, vec![0]);
    }
}

use proptest::prelude::*;
use vortex_core::analysis::{footprint, footprint_offsets, footprint_oracle, footprint_positions, FootprintMode};
use vortex_core::context::{argmax_labels, BranchSpec, ModuleConfig, ModuleKind};
use vortex_core::conv::{conv2d, ConvSpec};
use vortex_core::grad::avg_pool_backward;
use vortex_core::pooling::{count_map, pool, pyramid_cascaded, pyramid_naive, Norm, PoolSpec, PyramidImpl};
use vortex_core::rng::rng_fill;
use vortex_core::{DType, FeatureMap, WeightTensor};

fn norm() -> impl Strategy<Value = Norm> {
    prop_oneof![Just(Norm::Sum), Just(Norm::AvgValidCount), Just(Norm::AvgIncludePad)]
}

fn pool_spec() -> impl Strategy<Value = PoolSpec> {
    ((0usize..4).prop_map(|r| 2 * r + 1), 1usize..4, norm()).prop_map(|(k, d, n)| PoolSpec::new(k, d, n).unwrap())
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cascade_matches_naive(
        (k, levels) in prop_oneof![Just((3usize, 1u32)), Just((3, 2)), Just((3, 3)), Just((5, 1)), Just((5, 2)), Just((5, 3))],
        h in 1usize..40, w in 1usize..40, c in 1usize..5, seed: u64,
    ) {
        let x = rng_fill(seed, h, w, c, DType::F64);
        let diff = pyramid_naive(&x, k, levels).unwrap().max_abs_diff(&pyramid_cascaded(&x, k, levels).unwrap());
        prop_assert!(diff <= 1e-9, "diff {diff}");
    }

    #[test]
    fn sum_pool_conserves_weighted_mass(spec in pool_spec(), h in 1usize..16, w in 1usize..16, seed: u64) {
        let spec = PoolSpec::sum(spec.kernel(), spec.dilation()).unwrap();
        let x = rng_fill(seed, h, w, 1, DType::F64);
        let y = pool(&x, &spec);
        // each input is read by as many windows as it has in-bounds taps
        let n = count_map(h, w, &spec).unwrap();
        let expected = x.dot(&n).unwrap();
        let got: f64 = y.data().iter().sum();
        prop_assert!(rel(got, expected) <= 1e-12);
    }

    #[test]
    fn impulse_mass_equals_reach(spec in pool_spec(), h in 1usize..14, w in 1usize..14, i in 0usize..14, j in 0usize..14) {
        let (i, j) = (i % h, j % w);
        let spec = PoolSpec::sum(spec.kernel(), spec.dilation()).unwrap();
        let y = pool(&FeatureMap::impulse(h, w, 1, (i, j, 0)).unwrap(), &spec);
        let mass: f64 = y.data().iter().sum();
        prop_assert_eq!(mass, count_map(h, w, &spec).unwrap().get(i, j, 0));
    }

    #[test]
    fn unit_kernel_is_identity(n in norm(), d in 1usize..5, h in 1usize..10, w in 1usize..10, seed: u64) {
        let x = rng_fill(seed, h, w, 2, DType::F32);
        prop_assert_eq!(pool(&x, &PoolSpec::new(1, d, n).unwrap()), x);
    }

    #[test]
    fn averaging_stays_within_range(spec in pool_spec(), h in 1usize..16, w in 1usize..16, seed: u64) {
        let x = rng_fill(seed, h, w, 2, DType::F64);
        let valid = pool(&x, &PoolSpec::new(spec.kernel(), spec.dilation(), Norm::AvgValidCount).unwrap());
        prop_assert!(valid.max_value() <= x.max_value() + 1e-12);
        prop_assert!(valid.min_value() >= x.min_value() - 1e-12);
        // zero padding pulls include-pad averages towards zero
        let pad = pool(&x, &PoolSpec::new(spec.kernel(), spec.dilation(), Norm::AvgIncludePad).unwrap());
        prop_assert!(pad.max_value() <= x.max_value().max(0.0) + 1e-12);
        prop_assert!(pad.min_value() >= x.min_value().min(0.0) - 1e-12);
    }

    #[test]
    fn pyramid_levels_are_smooth(h in 1usize..30, w in 1usize..30, seed: u64) {
        let x = rng_fill(seed, h, w, 1, DType::F64);
        let p = pyramid_cascaded(&x, 3, 3).unwrap();
        for lvl in p.levels() {
            prop_assert!(lvl.max_value() <= x.max_value() + 1e-12);
            prop_assert!(lvl.min_value() >= x.min_value() - 1e-12);
        }
    }

    #[test]
    fn pool_adjoint(spec in pool_spec(), h in 1usize..12, w in 1usize..12, s1: u64, s2: u64) {
        let u = rng_fill(s1, h, w, 2, DType::F64);
        let v = rng_fill(s2, h, w, 2, DType::F64);
        let lhs = pool(&u, &spec).dot(&v).unwrap();
        let rhs = u.dot(&avg_pool_backward(&v, h, w, &spec).unwrap()).unwrap();
        prop_assert!(rel(lhs, rhs) <= 1e-12, "{lhs} vs {rhs}");
    }

    #[test]
    fn conv_is_linear(d in 1usize..4, h in 1usize..10, w in 1usize..10, a in -2.0f64..2.0, b in -2.0f64..2.0, seed: u64) {
        let wt = WeightTensor::random(seed, 3, 2, 3, 3, DType::F64).unwrap().without_bias();
        let spec = ConvSpec::new(d).unwrap();
        let x = rng_fill(seed ^ 1, h, w, 2, DType::F64);
        let y = rng_fill(seed ^ 2, h, w, 2, DType::F64);
        let lhs = conv2d(&x.axpby(a, &y, b).unwrap(), &wt, &spec).unwrap();
        let rhs = conv2d(&x, &wt, &spec).unwrap().axpby(a, &conv2d(&y, &wt, &spec).unwrap(), b).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-12);
    }

    #[test]
    fn conv_commutes_with_interior_shifts(d in 1usize..3, di in 0usize..4, dj in 0usize..4, seed: u64) {
        let wt = WeightTensor::random(seed, 2, 1, 3, 3, DType::F64).unwrap();
        let spec = ConvSpec::new(d).unwrap();
        let n = 16;
        let y0 = conv2d(&FeatureMap::impulse(n, n, 1, (6, 6, 0)).unwrap(), &wt, &spec).unwrap();
        let y1 = conv2d(&FeatureMap::impulse(n, n, 1, (6 + di, 6 + dj, 0)).unwrap(), &wt, &spec).unwrap();
        for i in 6 - 2 * d..=6 + 2 * d {
            for j in 6 - 2 * d..=6 + 2 * d {
                prop_assert_eq!(y0.pixel(i, j), y1.pixel(i + di, j + dj));
            }
        }
    }

    #[test]
    fn argmax_survives_positive_scaling(h in 1usize..8, w in 1usize..8, c in 1usize..6, shift in -3i32..4, seed: u64) {
        let logits = rng_fill(seed, h, w, c, DType::F64);
        let scaled = logits.axpby(2f64.powi(shift), &logits, 0.0).unwrap();
        prop_assert_eq!(argmax_labels(&logits), argmax_labels(&scaled));
    }
}

fn branch() -> impl Strategy<Value = (usize, usize, usize, usize)> {
    (
        (0usize..4).prop_map(|r| 2 * r + 1),
        1usize..4,
        prop_oneof![Just(1usize), Just(3)],
        1usize..9,
    )
}

fn random_config(branches: Vec<(usize, usize, usize, usize)>) -> ModuleConfig {
    let mut cfg = ModuleConfig::aspp().with_branch_out_c(1);
    cfg.kind = ModuleKind::ModuleA;
    cfg.branches = branches
        .into_iter()
        .enumerate()
        .map(|(i, (pk, pd, ck, cd))| BranchSpec { pool_dilation: pd, ..BranchSpec::new(format!("b{i}"), pk, ck, cd) })
        .collect();
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn symbolic_footprint_matches_oracle(
        branches in prop::collection::vec(branch(), 1..4),
        h in 1usize..16, w in 1usize..16, pi in 0usize..16, pj in 0usize..16,
    ) {
        let cfg = random_config(branches);
        let pixel = (pi % h, pj % w);
        prop_assert_eq!(
            footprint_positions(&cfg, h, w, pixel).unwrap(),
            footprint_oracle(&cfg, h, w, pixel).unwrap()
        );
    }

    #[test]
    fn clipped_footprint_grows_with_the_map(
        branches in prop::collection::vec(branch(), 1..4),
        h in 1usize..20, w in 1usize..20, extra in 0usize..10,
    ) {
        let cfg = random_config(branches);
        let pixel = Some((h / 2, w / 2));
        let small = footprint(&cfg, h, w, pixel, FootprintMode::Clipped).unwrap();
        let big = footprint(&cfg, h + extra, w + extra, pixel, FootprintMode::Clipped).unwrap();
        let free = footprint(&cfg, h, w, pixel, FootprintMode::Unclipped).unwrap();
        prop_assert!(small.u <= big.u);
        prop_assert!(big.u <= free.u);
        prop_assert_eq!(free.u, footprint_offsets(&cfg).unwrap().len());
    }

    #[test]
    fn unclipped_footprint_ignores_position(
        branches in prop::collection::vec(branch(), 1..4),
        h in 1usize..40, w in 1usize..40, pi in 0usize..40, pj in 0usize..40,
    ) {
        let cfg = random_config(branches);
        let a = footprint(&cfg, h, w, Some((pi % h, pj % w)), FootprintMode::Unclipped).unwrap();
        let b = footprint(&cfg, h, w, None, FootprintMode::Unclipped).unwrap();
        prop_assert_eq!(a.u, b.u);
    }
}

fn module_b_full(n: usize, pixel: (usize, usize)) -> bool {
    let cfg = ModuleConfig::module_b(PyramidImpl::Cascaded);
    footprint(&cfg, n, n, Some(pixel), FootprintMode::Clipped).unwrap().r == 1.0
}

#[test]
fn module_b_covers_every_pixel_up_to_14() {
    for n in 1usize..=14 {
        for i in 0..n {
            for j in 0..n {
                assert!(module_b_full(n, (i, j)), "{n}x{n} at ({i},{j})");
            }
        }
    }
    // the corner of a 15-wide map only reaches 0..=13 and 27.. is outside
    assert!(!module_b_full(15, (0, 0)));
    for n in [40usize, 81] {
        assert!((0..n).any(|i| !module_b_full(n, (i, i))), "{n}");
    }
}

#[test]
fn module_b_centre_coverage() {
    for n in 1usize..=100 {
        let expected = n <= 27 || (55..=81).contains(&n);
        assert_eq!(module_b_full(n, (n / 2, n / 2)), expected, "{n}x{n}");
    }
}

#[test]
fn module_b_implementations_agree_on_40x40() {
    use vortex_core::context::{module_forward, random_bank};
    let x = rng_fill(21, 40, 40, 8, DType::F64);
    let naive = ModuleConfig::module_b(PyramidImpl::Naive).with_branch_out_c(4);
    let casc = ModuleConfig::module_b(PyramidImpl::Cascaded).with_branch_out_c(4);
    let bank = random_bank(&naive, 8, 3).unwrap();
    let a = module_forward(&x, &naive, &bank).unwrap();
    let b = module_forward(&x, &casc, &bank).unwrap();
    assert!(a.max_abs_diff(&b) <= 1e-9);
}

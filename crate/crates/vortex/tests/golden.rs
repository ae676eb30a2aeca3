//! Values frozen from the independent numpy oracle in `oracles/make_goldens.py`.

use std::path::PathBuf;

use serde_json::Value;
use vortex_core::context::{
    argmax_labels, image_level_feature, module_forward, random_bank, seg_head, HeadConfig, ModuleConfig,
};
use vortex_core::conv::{conv2d, ConvSpec};
use vortex_core::pooling::{global_avg_pool, pyramid_cascaded, pyramid_naive, PyramidImpl};
use vortex_core::rng::{rng_fill, SplitMix64};
use vortex_core::{DType, FeatureMap, WeightTensor};
use vortex_pool::fmap::fmap_read;

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn scalars() -> Value {
    serde_json::from_str(&std::fs::read_to_string(golden("scalars.json")).unwrap()).unwrap()
}

fn assert_close(got: &FeatureMap, want: &FeatureMap, tol: f64) {
    assert_eq!(got.shape(), want.shape());
    let d = got.max_abs_diff(want);
    assert!(d <= tol, "max abs diff {d:e} > {tol:e}");
}

#[test]
fn splitmix_first_output() {
    let s = scalars();
    let mut g = SplitMix64::new(1);
    let z = g.next_u64();
    assert_eq!(z, s["splitmix_seed1_first_u64"].as_u64().unwrap());
    assert_eq!(vortex_core::rng::to_signed_unit(z), s["splitmix_seed1_first_unit"].as_f64().unwrap());
}

#[test]
fn pyramid_levels() {
    let x = rng_fill(7, 16, 16, 2, DType::F64);
    for p in [pyramid_naive(&x, 3, 2).unwrap(), pyramid_cascaded(&x, 3, 2).unwrap()] {
        assert_close(p.level(1), &fmap_read(golden("pyramid_seed7_l1.fmap")).unwrap(), 1e-12);
        assert_close(p.level(2), &fmap_read(golden("pyramid_seed7_l2.fmap")).unwrap(), 1e-12);
    }
}

#[test]
fn global_average() {
    let x = rng_fill(3, 8, 8, 4, DType::F64);
    let want = fmap_read(golden("gap_seed3.fmap")).unwrap();
    let got = FeatureMap::new(1, 1, 4, DType::F64, global_avg_pool(&x)).unwrap();
    assert_close(&got, &want, 1e-15);
}

#[test]
fn dilated_conv() {
    let x = rng_fill(11, 5, 5, 3, DType::F64);
    let w = WeightTensor::random(12, 2, 3, 3, 3, DType::F64).unwrap();
    let y = conv2d(&x, &w, &ConvSpec::new(2).unwrap()).unwrap();
    assert_close(&y, &fmap_read(golden("conv_seed11.fmap")).unwrap(), 1e-13);
}

#[test]
fn image_level() {
    let x = rng_fill(31, 6, 5, 3, DType::F64);
    let w = WeightTensor::random(32, 2, 3, 1, 1, DType::F64).unwrap();
    let y = image_level_feature(&x, &w, 6, 5).unwrap();
    assert_close(&y, &fmap_read(golden("image_level_seed31.fmap")).unwrap(), 1e-14);
}

#[test]
fn full_pipeline_checksum() {
    let want = &scalars()["pipeline_seed41"];
    let x = rng_fill(41, 33, 33, 16, DType::F64);
    for imp in [PyramidImpl::Naive, PyramidImpl::Cascaded] {
        let cfg = ModuleConfig::module_b(imp).with_branch_out_c(8);
        let bank = random_bank(&cfg, 16, 42).unwrap();
        let y = module_forward(&x, &cfg, &bank).unwrap();
        let g = image_level_feature(&x, &WeightTensor::random(142, 8, 16, 1, 1, DType::F64).unwrap(), 33, 33).unwrap();
        let head = HeadConfig::new(WeightTensor::random(242, 21, 40, 1, 1, DType::F64).unwrap(), 264, 264).unwrap();
        let out = seg_head(&y, Some(&g), &head).unwrap();

        assert_eq!(out.shape(), (264, 264, 21));
        let sum: f64 = out.data().iter().sum();
        let sum_sq: f64 = out.data().iter().map(|v| v * v).sum();
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
        assert!(rel(sum, want["sum"].as_f64().unwrap()) <= 1e-10, "{imp:?} sum {sum}");
        assert!(rel(sum_sq, want["sum_sq"].as_f64().unwrap()) <= 1e-10, "{imp:?} sum_sq {sum_sq}");
        for (key, (i, j, k)) in
            [("sample_0_0_0", (0, 0, 0)), ("sample_131_77_5", (131, 77, 5)), ("sample_263_263_20", (263, 263, 20))]
        {
            assert!((out.get(i, j, k) - want[key].as_f64().unwrap()).abs() <= 1e-9, "{imp:?} {key}");
        }

        let labels = argmax_labels(&out);
        let mut hist = vec![0u64; 21];
        for &l in &labels.labels {
            hist[l as usize] += 1;
        }
        let want_hist: Vec<u64> = want["label_hist"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
        assert_eq!(hist, want_hist, "{imp:?}");
    }
}

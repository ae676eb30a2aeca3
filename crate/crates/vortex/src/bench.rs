//! Timing harness for pooling pyramids.
//!
//! Every contender runs on the same seeded input and must agree with the
//! direct-summation pyramid before any timing is taken.

use std::hint::black_box;
use std::thread;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;
use vortex_core::pooling::{pyramid_cascaded, pyramid_cascaded_counted, pyramid_naive, pyramid_naive_counted};
use vortex_core::rng::rng_fill;
use vortex_core::{concat_channels, DType, FeatureMap};

pub const MIN_REPS: usize = 5;
pub const MIN_WARMUPS: usize = 3;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("need at least {MIN_REPS} timed repetitions, got {0}")]
    TooFewReps(usize),
    #[error("need at least {MIN_WARMUPS} warmup runs, got {0}")]
    TooFewWarmups(usize),
    #[error("thread count must be positive")]
    ZeroThreads,
    #[error("{impl_name} disagrees with naive by {diff:e} (tolerance {tol:e}); no timings reported")]
    Mismatch { impl_name: String, diff: f64, tol: f64 },
    #[error(transparent)]
    Core(#[from] vortex_core::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub k: usize,
    pub levels: u32,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub dtype: DType,
    pub reps: usize,
    pub warmups: usize,
    /// Channel blocks evaluated concurrently.
    pub threads: usize,
    pub seed: u64,
    pub integral: bool,
}

impl BenchConfig {
    pub fn new(k: usize, levels: u32, h: usize, w: usize, c: usize) -> Self {
        Self { k, levels, h, w, c, dtype: DType::F64, reps: MIN_REPS, warmups: MIN_WARMUPS, threads: 1, seed: 1, integral: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchResult {
    pub impl_name: String,
    pub k: usize,
    pub levels: u32,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub dtype: String,
    pub reps: usize,
    pub warmups: usize,
    pub threads: usize,
    pub median_ns: u64,
    pub per_element_ns: f64,
    pub add_count: u64,
    /// Naive median over this median.
    pub speedup: f64,
    /// Largest difference from the naive output.
    pub max_abs_diff: f64,
}

/// Agreement tolerance for the correctness gate. f32 outputs are rounded
/// independently, so they may differ by one unit in the last place.
pub fn gate_tolerance(dtype: DType) -> f64 {
    match dtype {
        DType::F64 => 1e-9,
        DType::F32 => f32::EPSILON as f64,
    }
}

/// Box averages of side `k, k^2, ..` through a summed-area table.
pub fn pyramid_integral(x: &FeatureMap, k: usize, levels: u32) -> vortex_core::Result<Vec<FeatureMap>> {
    let (h, w, c) = x.shape();
    let sw = w + 1;
    let mut table = vec![0.0; (h + 1) * sw * c];
    for i in 0..h {
        let mut row = vec![0.0; c];
        for j in 0..w {
            let dst = ((i + 1) * sw + j + 1) * c;
            let up = (i * sw + j + 1) * c;
            for (ch, v) in x.pixel(i, j).iter().enumerate() {
                row[ch] += v;
                table[dst + ch] = table[up + ch] + row[ch];
            }
        }
    }
    let mut out = Vec::with_capacity(levels as usize);
    let mut side = 1usize;
    for _ in 0..levels {
        side = side.checked_mul(k).ok_or(vortex_core::Error::KernelOverflow { base: k, levels })?;
        let r = side / 2;
        let mut data = Vec::with_capacity(h * w * c);
        for i in 0..h {
            let (y0, y1) = (i.saturating_sub(r), (i + r).min(h - 1) + 1);
            for j in 0..w {
                let (x0, x1) = (j.saturating_sub(r), (j + r).min(w - 1) + 1);
                let n = ((y1 - y0) * (x1 - x0)) as f64;
                let (a, b) = ((y1 * sw + x1) * c, (y0 * sw + x1) * c);
                let (cc, d) = ((y1 * sw + x0) * c, (y0 * sw + x0) * c);
                for ch in 0..c {
                    data.push((table[a + ch] - table[b + ch] - table[cc + ch] + table[d + ch]) / n);
                }
            }
        }
        out.push(FeatureMap::new(h, w, c, x.dtype(), data)?);
    }
    Ok(out)
}

type Contender = fn(&FeatureMap, usize, u32) -> vortex_core::Result<Vec<FeatureMap>>;

fn naive(x: &FeatureMap, k: usize, l: u32) -> vortex_core::Result<Vec<FeatureMap>> {
    pyramid_naive(x, k, l).map(|p| p.into_levels())
}

fn cascaded(x: &FeatureMap, k: usize, l: u32) -> vortex_core::Result<Vec<FeatureMap>> {
    pyramid_cascaded(x, k, l).map(|p| p.into_levels())
}

/// Split `x` into channel blocks, run `f` on each concurrently and rejoin.
fn run_split(f: Contender, blocks: &[FeatureMap], k: usize, l: u32) -> vortex_core::Result<Vec<FeatureMap>> {
    if blocks.len() == 1 {
        return f(&blocks[0], k, l);
    }
    let parts: Vec<_> = thread::scope(|s| {
        let handles: Vec<_> = blocks.iter().map(|b| s.spawn(move || f(b, k, l))).collect();
        handles.into_iter().map(|h| h.join().expect("pyramid worker panicked")).collect()
    });
    let parts = parts.into_iter().collect::<vortex_core::Result<Vec<_>>>()?;
    (0..l as usize)
        .map(|lvl| concat_channels(&parts.iter().map(|p| &p[lvl]).collect::<Vec<_>>()))
        .collect()
}

fn channel_blocks(x: &FeatureMap, threads: usize) -> vortex_core::Result<Vec<FeatureMap>> {
    let n = threads.min(x.c());
    let base = x.c() / n;
    let extra = x.c() % n;
    let mut start = 0;
    (0..n)
        .map(|i| {
            let count = base + usize::from(i < extra);
            let b = x.channel_block(start, count);
            start += count;
            b
        })
        .collect()
}

fn max_diff(a: &[FeatureMap], b: &[FeatureMap]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(p, q)| p.max_abs_diff(q)).fold(0.0, f64::max)
}

fn median(mut v: Vec<u64>) -> u64 {
    v.sort_unstable();
    v[v.len() / 2]
}

/// Gate, then time, every contender. The first result is always naive.
pub fn bench_pyramid(cfg: &BenchConfig) -> Result<Vec<BenchResult>, BenchError> {
    if cfg.reps < MIN_REPS {
        return Err(BenchError::TooFewReps(cfg.reps));
    }
    if cfg.warmups < MIN_WARMUPS {
        return Err(BenchError::TooFewWarmups(cfg.warmups));
    }
    if cfg.threads == 0 {
        return Err(BenchError::ZeroThreads);
    }
    if cfg.h == 0 || cfg.w == 0 || cfg.c == 0 {
        return Err(vortex_core::Error::ZeroDimension { h: cfg.h, w: cfg.w, c: cfg.c }.into());
    }
    let (k, l) = (cfg.k, cfg.levels);
    let x = rng_fill(cfg.seed, cfg.h, cfg.w, cfg.c, cfg.dtype);
    let blocks = channel_blocks(&x, cfg.threads)?;

    let (_, naive_stats) = pyramid_naive_counted(&x, k, l)?;
    let (_, casc_stats) = pyramid_cascaded_counted(&x, k, l)?;
    let n = (cfg.h * cfg.w * cfg.c) as u64;
    let mut contenders: Vec<(&str, Contender, u64)> = vec![
        ("naive", naive, naive_stats.data_adds + naive_stats.count_adds),
        ("cascaded", cascaded, casc_stats.data_adds + casc_stats.count_adds),
    ];
    if cfg.integral {
        // three adds per table entry, three per window lookup
        contenders.push(("integral", pyramid_integral, 3 * n + 3 * n * l as u64));
    }

    let reference = run_split(naive, &blocks, k, l)?;
    let tol = gate_tolerance(cfg.dtype);
    let mut diffs = Vec::with_capacity(contenders.len());
    for &(name, f, _) in &contenders {
        let diff = max_diff(&reference, &run_split(f, &blocks, k, l)?);
        if !(diff <= tol) {
            return Err(BenchError::Mismatch { impl_name: name.into(), diff, tol });
        }
        diffs.push(diff);
    }

    let mut results: Vec<BenchResult> = Vec::with_capacity(contenders.len());
    for (&(name, f, adds), diff) in contenders.iter().zip(diffs) {
        for _ in 0..cfg.warmups {
            black_box(run_split(f, black_box(&blocks), k, l)?);
        }
        let mut times = Vec::with_capacity(cfg.reps);
        for _ in 0..cfg.reps {
            let t = Instant::now();
            black_box(run_split(f, black_box(&blocks), k, l)?);
            times.push(t.elapsed().as_nanos() as u64);
        }
        let median_ns = median(times).max(1);
        results.push(BenchResult {
            impl_name: name.into(),
            k,
            levels: l,
            h: cfg.h,
            w: cfg.w,
            c: cfg.c,
            dtype: cfg.dtype.name().into(),
            reps: cfg.reps,
            warmups: cfg.warmups,
            threads: blocks.len(),
            median_ns,
            per_element_ns: median_ns as f64 / n as f64,
            add_count: adds,
            speedup: 1.0,
            max_abs_diff: diff,
        });
    }
    let base = results[0].median_ns as f64;
    for r in &mut results {
        r.speedup = base / r.median_ns as f64;
    }
    Ok(results)
}

use std::error::Error;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use vortex_core::analysis::{footprint, FootprintMode, FootprintReport};
use vortex_core::context::{
    image_level_feature, module_forward, random_bank, seg_head, HeadConfig, ModuleConfig, HEAD, IMAGE_LEVEL,
};
use vortex_core::grad::GradCheckConfig;
use vortex_core::pooling::PyramidImpl;
use vortex_core::rng::rng_fill;
use vortex_core::verify::{adjoint_suite, gradient_suite, module_equivalence_suite, pyramid_equivalence_suite};
use vortex_core::{DType, WeightBank, WeightTensor};
use vortex_pool::bench::{bench_pyramid, BenchConfig, MIN_REPS, MIN_WARMUPS};
use vortex_pool::config::read_config;
use vortex_pool::fmap::{fmap_read, fmap_write};
use vortex_pool::wbank::{wbank_read, wbank_write};

type AnyResult<T> = Result<T, Box<dyn Error>>;

/// Vortex pooling kernels: module evaluation, equivalence and gradient
/// checks, footprint analysis and pyramid benchmarks.
#[derive(Parser, Debug)]
#[command(name = "vortex", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a context module (and optionally the segmentation head) on a map.
    Forward(ForwardArgs),
    /// Compare naive and cascaded pyramids and Module B on seeded inputs.
    EqCheck(EqCheckArgs),
    /// Dependency footprint and utilization ratio of one output position.
    Footprint(FootprintArgs),
    /// Finite-difference and adjoint checks for every backward pass.
    Gradcheck(GradcheckArgs),
    /// Time pyramid implementations; one JSON object per line.
    Bench(BenchArgs),
    /// Write a seeded random feature map.
    Gen(GenArgs),
    /// Write a seeded random weight bank for a config.
    GenWeights(GenWeightsArgs),
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ImplArg {
    Naive,
    Cascaded,
}

impl From<ImplArg> for PyramidImpl {
    fn from(v: ImplArg) -> Self {
        match v {
            ImplArg::Naive => PyramidImpl::Naive,
            ImplArg::Cascaded => PyramidImpl::Cascaded,
        }
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum DTypeArg {
    F32,
    F64,
}

impl From<DTypeArg> for DType {
    fn from(v: DTypeArg) -> Self {
        match v {
            DTypeArg::F32 => DType::F32,
            DTypeArg::F64 => DType::F64,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Clipped,
    Unclipped,
    Both,
}

#[derive(Args, Debug)]
struct ForwardArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Overrides the config's pyramid implementation.
    #[arg(long = "impl", value_enum)]
    imp: Option<ImplArg>,
    /// Apply the segmentation head (bank entries `head` and, if enabled, `image_level`).
    #[arg(long)]
    head: bool,
    /// Head output rows (default: input rows).
    #[arg(long, requires = "head")]
    out_h: Option<usize>,
    /// Head output columns (default: input columns).
    #[arg(long, requires = "head")]
    out_w: Option<usize>,
}

#[derive(Args, Debug)]
struct EqCheckArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Pyramid cases.
    #[arg(long, default_value_t = 200)]
    cases: usize,
    #[arg(long, default_value_t = 64)]
    max_size: usize,
    #[arg(long, default_value_t = 8)]
    max_channels: usize,
    /// Module B cases (sizes 8..=max-size, channels up to 16).
    #[arg(long, default_value_t = 100)]
    module_cases: usize,
    #[arg(long)]
    json: bool,
}

fn parse_pixel(s: &str) -> Result<(usize, usize), String> {
    let bad = || format!("invalid pixel `{s}`, expected R,C");
    let (r, c) = s.split_once(',').ok_or_else(bad)?;
    Ok((r.trim().parse().map_err(|_| bad())?, c.trim().parse().map_err(|_| bad())?))
}

#[derive(Args, Debug)]
struct FootprintArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    h: usize,
    #[arg(long)]
    w: usize,
    /// Output position for clipped mode (default: the centre).
    #[arg(long, value_parser = parse_pixel)]
    pixel: Option<(usize, usize)>,
    #[arg(long, value_enum, default_value_t = ModeArg::Both)]
    mode: ModeArg,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 200)]
    max_probes: usize,
    #[arg(long, default_value_t = GradCheckConfig::default().seed)]
    seed: u64,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    k: usize,
    #[arg(long)]
    levels: u32,
    #[arg(long)]
    h: usize,
    #[arg(long)]
    w: usize,
    #[arg(long)]
    c: usize,
    #[arg(long, value_enum, default_value_t = DTypeArg::F64)]
    dtype: DTypeArg,
    #[arg(long, default_value_t = MIN_REPS)]
    reps: usize,
    #[arg(long, default_value_t = MIN_WARMUPS)]
    warmups: usize,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Skip the summed-area-table contender.
    #[arg(long)]
    no_integral: bool,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    h: usize,
    #[arg(long)]
    w: usize,
    #[arg(long)]
    c: usize,
    #[arg(long, value_enum, default_value_t = DTypeArg::F64)]
    dtype: DTypeArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GenWeightsArgs {
    #[arg(long)]
    config: PathBuf,
    /// Input channels of the maps the module will see.
    #[arg(long)]
    in_c: usize,
    #[arg(long)]
    seed: u64,
    /// Also add `image_level` and a `head` projecting to this many classes.
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn forward(a: &ForwardArgs) -> AnyResult<()> {
    let mut cfg = read_config(&a.config)?;
    if let Some(imp) = a.imp {
        cfg.pyramid_impl = imp.into();
    }
    let bank = wbank_read(&a.weights)?;
    let x = fmap_read(&a.input)?;
    let mut y = module_forward(&x, &cfg, &bank)?;
    if a.head {
        let get = |name: &str| bank.get(name).ok_or_else(|| vortex_core::Error::MissingWeights(name.into()));
        let g = match cfg.include_image_level {
            true => Some(image_level_feature(&x, get(IMAGE_LEVEL)?, x.h(), x.w())?),
            false => None,
        };
        let head = HeadConfig::new(get(HEAD)?.clone(), a.out_h.unwrap_or(x.h()), a.out_w.unwrap_or(x.w()))?;
        y = seg_head(&y, g.as_ref(), &head)?;
    }
    fmap_write(&y, &a.output)?;
    Ok(())
}

fn eq_check(a: &EqCheckArgs) -> AnyResult<bool> {
    let p = pyramid_equivalence_suite(a.seed, a.cases, a.max_size, a.max_channels)?;
    let m = module_equivalence_suite(a.seed, a.module_cases, 8.min(a.max_size), a.max_size, 16)?;
    for r in [&p, &m] {
        if a.json {
            let v = json!({
                "suite": r.suite, "cases": r.cases, "worst_abs_diff": r.worst_abs_diff,
                "worst_case": r.worst_case, "tolerance": r.tolerance, "passed": r.passed,
            });
            println!("{v}");
        } else {
            println!(
                "suite={} cases={} worst_abs_diff={:e} tolerance={:e} passed={} worst_case=\"{}\"",
                r.suite, r.cases, r.worst_abs_diff, r.tolerance, r.passed, r.worst_case
            );
        }
    }
    Ok(p.passed && m.passed)
}

fn print_footprint(r: &FootprintReport, as_json: bool) {
    let pixel = (r.mode == FootprintMode::Clipped).then_some(r.pixel);
    if as_json {
        let pixel = pixel.map(|(i, j)| [i, j]);
        println!("{}", json!({"mode": r.mode.name(), "h": r.h, "w": r.w, "pixel": pixel, "u": r.u, "r": r.r}));
    } else {
        let at = pixel.map(|(i, j)| format!(" pixel={i},{j}")).unwrap_or_default();
        println!("mode={} h={} w={}{} u={} r={:.6}", r.mode.name(), r.h, r.w, at, r.u, r.r);
    }
}

fn footprint_cmd(a: &FootprintArgs) -> AnyResult<()> {
    let cfg = read_config(&a.config)?;
    let modes: &[FootprintMode] = match a.mode {
        ModeArg::Clipped => &[FootprintMode::Clipped],
        ModeArg::Unclipped => &[FootprintMode::Unclipped],
        ModeArg::Both => &[FootprintMode::Unclipped, FootprintMode::Clipped],
    };
    for &mode in modes {
        print_footprint(&footprint(&cfg, a.h, a.w, a.pixel, mode)?, a.json);
    }
    Ok(())
}

fn gradcheck(a: &GradcheckArgs) -> AnyResult<bool> {
    let cfg = GradCheckConfig { eps: a.eps, tol: a.tol, max_probes: a.max_probes, seed: a.seed };
    let mut ok = true;
    for r in gradient_suite(&cfg)? {
        ok &= r.passed;
        if a.json {
            let v = json!({
                "check": "finite_difference", "op": r.op_name, "max_rel_err": r.max_rel_err,
                "worst_index": r.worst_index, "probes": r.probes, "passed": r.passed,
            });
            println!("{v}");
        } else {
            println!(
                "fd op={} probes={} max_rel_err={:e} worst_index={} passed={}",
                r.op_name, r.probes, r.max_rel_err, r.worst_index, r.passed
            );
        }
    }
    for r in adjoint_suite(a.seed)? {
        ok &= r.passed;
        if a.json {
            let v = json!({"check": "adjoint", "op": r.op_name, "rel_err": r.rel_err, "passed": r.passed});
            println!("{v}");
        } else {
            println!("adjoint op={} rel_err={:e} passed={}", r.op_name, r.rel_err, r.passed);
        }
    }
    Ok(ok)
}

fn bench(a: &BenchArgs) -> AnyResult<()> {
    let cfg = BenchConfig {
        dtype: a.dtype.into(),
        reps: a.reps,
        warmups: a.warmups,
        threads: a.threads,
        seed: a.seed,
        integral: !a.no_integral,
        ..BenchConfig::new(a.k, a.levels, a.h, a.w, a.c)
    };
    for r in bench_pyramid(&cfg)? {
        println!("{}", serde_json::to_string(&r)?);
    }
    Ok(())
}

fn gen(a: &GenArgs) -> AnyResult<()> {
    if a.h == 0 || a.w == 0 || a.c == 0 {
        return Err(vortex_core::Error::ZeroDimension { h: a.h, w: a.w, c: a.c }.into());
    }
    fmap_write(&rng_fill(a.seed, a.h, a.w, a.c, a.dtype.into()), &a.out)?;
    Ok(())
}

/// Branch `i` uses `seed + i`, the image-level projection `seed + 100` and
/// the head `seed + 200`.
fn gen_weights(a: &GenWeightsArgs) -> AnyResult<()> {
    let cfg: ModuleConfig = read_config(&a.config)?;
    let mut bank: WeightBank = random_bank(&cfg, a.in_c, a.seed)?;
    if let Some(classes) = a.classes {
        let mut head_in = cfg.out_channels();
        if cfg.include_image_level {
            let g = WeightTensor::random(a.seed + 100, cfg.branch_out_c, a.in_c, 1, 1, DType::F64)?;
            head_in += g.out_c();
            bank.insert(IMAGE_LEVEL, g);
        }
        bank.insert(HEAD, WeightTensor::random(a.seed + 200, classes, head_in, 1, 1, DType::F64)?);
    }
    wbank_write(&bank, &a.out)?;
    Ok(())
}

fn run(cli: Cli) -> AnyResult<bool> {
    match cli.command {
        Command::Forward(a) => forward(&a).map(|_| true),
        Command::EqCheck(a) => eq_check(&a),
        Command::Footprint(a) => footprint_cmd(&a).map(|_| true),
        Command::Gradcheck(a) => gradcheck(&a),
        Command::Bench(a) => bench(&a).map(|_| true),
        Command::Gen(a) => gen(&a).map(|_| true),
        Command::GenWeights(a) => gen_weights(&a).map(|_| true),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

//! Command-line surface: render occlusion models over images, fit their
//! parameters against a target set, compute guidance maps, and run the
//! synthetic recovery benchmarks.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 numerical
//! failure, 4 I/O error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use occlusim::bench::{
    self, generate_corpus, run_recovery, sweep_landscape, RecoveryCase, RecoveryReport,
};
use occlusim::config::Config;
use occlusim::critic::{critic_fit, Critic};
use occlusim::error::Error;
use occlusim::estimate::{
    estimate_differentiable, estimate_joint, write_trace_csv, DiffEstimateConfig, FitnessSpec,
    JointConfig, Sources, TraceRow,
};
use occlusim::guidance::{compute_guidance, injection_mask};
use occlusim::models::{
    CompositeParams, DirtParams, DisplacementField, DropType, FogParams, ModelKind, ModelParams,
    RaindropParams,
};
use occlusim::raster::{load_depth, load_image, read_pgm16, save_image, DepthMap, Image, Plane};
use occlusim::rng::RngStream;

#[derive(Parser)]
#[command(
    name = "occlusim",
    version,
    about = "Physics-based lens occlusions: render, fit, guide, bench"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Shared {
    /// Config file with [section] key = value lines; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; all sub-streams derive from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a model over source images; writes composed PNGs and alpha PGMs.
    Render {
        #[command(flatten)]
        shared: Shared,
        /// Model: raindrop | dirt | fog | composite.
        #[arg(long)]
        model: Option<String>,
        /// Source image directory or single PNG.
        #[arg(long)]
        sources: Option<PathBuf>,
        /// Depth map (16-bit PGM) file or directory, required for fog.
        #[arg(long)]
        depth: Option<PathBuf>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        /// Displacement raster pair for raindrops.
        #[arg(long)]
        udisp: Option<PathBuf>,
        #[arg(long)]
        vdisp: Option<PathBuf>,
        /// Overlay image (PNG) for the composite model.
        #[arg(long)]
        overlay: Option<PathBuf>,
        /// Overlay opacity (16-bit PGM) for the composite model.
        #[arg(long)]
        overlay_alpha: Option<PathBuf>,
    },
    /// Estimate model parameters against a target set.
    Fit {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        sources: Option<PathBuf>,
        #[arg(long)]
        targets: Option<PathBuf>,
        #[arg(long)]
        depth: Option<PathBuf>,
        /// Skip the CMA-ES block; freeze non-differentiable parameters.
        #[arg(long)]
        only_differentiable: bool,
        /// CMA-ES population size.
        #[arg(long)]
        population: Option<usize>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        udisp: Option<PathBuf>,
        #[arg(long)]
        vdisp: Option<PathBuf>,
    },
    /// Compute the guidance map and injection mask from sources.
    Guidance {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        sources: Option<PathBuf>,
        /// Targets to fit a critic on (or use --critic).
        #[arg(long)]
        targets: Option<PathBuf>,
        /// Previously saved .critic file.
        #[arg(long)]
        critic: Option<PathBuf>,
        /// Injection threshold in [0, 1].
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Run the synthetic parameter-recovery benchmark.
    Bench {
        #[command(flatten)]
        shared: Shared,
        /// Comma-separated subset of raindrop,dirt,fog.
        #[arg(long)]
        models: Option<String>,
        /// Comma-separated seeds, one recovery run each.
        #[arg(long)]
        seeds: Option<String>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidParam(_) | Error::DimensionMismatch { .. } => 2,
        Error::NonFiniteLoss { .. } => 3,
        Error::Io { .. } | Error::UnsupportedImage { .. } | Error::DepthFormat { .. } => 4,
    }
}

type CliResult<T> = Result<T, Error>;

fn run(cli: Cli) -> CliResult<ExitCode> {
    match cli.command {
        Command::Render {
            shared,
            model,
            sources,
            depth,
            sigma,
            alpha,
            beta,
            udisp,
            vdisp,
            overlay,
            overlay_alpha,
        } => cmd_render(
            shared,
            model,
            sources,
            depth,
            sigma,
            alpha,
            beta,
            udisp,
            vdisp,
            overlay,
            overlay_alpha,
        ),
        Command::Fit {
            shared,
            model,
            sources,
            targets,
            depth,
            only_differentiable,
            population,
            sigma,
            alpha,
            beta,
            udisp,
            vdisp,
        } => cmd_fit(
            shared,
            model,
            sources,
            targets,
            depth,
            only_differentiable,
            population,
            sigma,
            alpha,
            beta,
            udisp,
            vdisp,
        ),
        Command::Guidance {
            shared,
            sources,
            targets,
            critic,
            gamma,
        } => cmd_guidance(shared, sources, targets, critic, gamma),
        Command::Bench {
            shared,
            models,
            seeds,
        } => cmd_bench(shared, models, seeds),
    }
}

/// File config overlaid by CLI state.
fn load_config(shared: &Shared) -> CliResult<Config> {
    let mut cfg = match &shared.config {
        Some(path) => Config::load(path)?,
        None => Config::new(),
    };
    if let Some(seed) = shared.seed {
        cfg.set("run.seed", &seed.to_string())?;
    }
    if let Some(out) = &shared.out {
        cfg.set("run.out", out.to_str().unwrap_or("out"))?;
    }
    if let Some(threads) = shared.threads {
        cfg.set("run.threads", &threads.to_string())?;
    }
    Ok(cfg)
}

fn init_threads(cfg: &Config) -> CliResult<()> {
    if let Some(n) = cfg.get_usize("run.threads")? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn out_dir(cfg: &Config) -> CliResult<PathBuf> {
    let dir = PathBuf::from(cfg.get("run.out").unwrap_or("out"));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn master_seed(cfg: &Config) -> CliResult<u64> {
    Ok(cfg.get_u64("run.seed")?.unwrap_or(0))
}

/// Sub-stream identifiers for the documented seed-splitting rule
/// (`substream = master_seed XOR id`).
mod stream {
    pub const RENDER: u64 = 0x100;
    pub const ESTIMATE: u64 = 0x200;
    pub const BENCH: u64 = 0x300;
    pub const LANDSCAPE: u64 = 0x400;
}

/// Load one PNG or every .png in a directory, sorted by file name.
fn load_image_set(path: &Path) -> CliResult<Vec<(String, Image)>> {
    if path.is_file() {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "image".into());
        return Ok(vec![(stem, load_image(path)?)]);
    }
    let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "png"))
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(Error::Config(format!(
            "no .png files found in {}",
            path.display()
        )));
    }
    entries
        .into_iter()
        .map(|p| {
            let stem = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok((stem, load_image(&p)?))
        })
        .collect()
}

/// Depth for each named source: a single PGM applied to all, or a directory
/// matched by file stem.
fn load_depth_set(path: &Path, names: &[String], meters_per_unit: f64) -> CliResult<Vec<DepthMap>> {
    if path.is_file() {
        let d = load_depth(path, meters_per_unit)?;
        return Ok(names.iter().map(|_| d.clone()).collect());
    }
    names
        .iter()
        .map(|stem| load_depth(&path.join(format!("{stem}.pgm")), meters_per_unit))
        .collect()
}

fn parse_model_kind(cfg: &Config, flag: Option<String>) -> CliResult<ModelKind> {
    let name = flag
        .or_else(|| cfg.get("model.name").map(String::from))
        .ok_or_else(|| Error::Config("missing --model (or model.name in config)".into()))?;
    ModelKind::parse(&name)
}

#[allow(clippy::too_many_arguments)]
fn build_params(
    kind: ModelKind,
    cfg: &Config,
    seed: u64,
    sigma: Option<f64>,
    alpha: Option<f64>,
    beta: Option<f64>,
    udisp: Option<&Path>,
    vdisp: Option<&Path>,
    overlay: Option<&Path>,
    overlay_alpha: Option<&Path>,
) -> CliResult<ModelParams> {
    match kind {
        ModelKind::Raindrop => {
            let mut p = RaindropParams::bench_default(seed);
            if let Some(s) = sigma.or(cfg.get_f64("raindrop.sigma")?) {
                p.sigma = s;
            }
            if let Some(lo) = cfg.get_f64("raindrop.thickness_min")? {
                p.thickness_range.0 = lo;
            }
            if let Some(hi) = cfg.get_f64("raindrop.thickness_max")? {
                p.thickness_range.1 = hi;
            }
            for (i, ty) in p.drop_types.iter_mut().enumerate() {
                let base = format!("raindrop.type{}", i + 1);
                *ty = DropType {
                    shape: cfg.get_f64(&format!("{base}.shape"))?.unwrap_or(ty.shape),
                    size: cfg.get_f64(&format!("{base}.size"))?.unwrap_or(ty.size),
                    frequency: cfg
                        .get_f64(&format!("{base}.freq"))?
                        .unwrap_or(ty.frequency),
                };
            }
            let u = udisp
                .map(Path::to_path_buf)
                .or_else(|| cfg.get("paths.udisp").map(Into::into));
            let v = vdisp
                .map(Path::to_path_buf)
                .or_else(|| cfg.get("paths.vdisp").map(Into::into));
            match (u, v) {
                (Some(u), Some(v)) => {
                    p.displacement = Arc::new(DisplacementField::load(&u, &v)?);
                }
                (None, None) => {}
                _ => {
                    return Err(Error::Config(
                        "displacement rasters need both --udisp and --vdisp".into(),
                    ))
                }
            }
            Ok(ModelParams::Raindrop(p))
        }
        ModelKind::Dirt => {
            let mut p = DirtParams::bench_default(seed);
            if let Some(s) = sigma.or(cfg.get_f64("dirt.sigma")?) {
                p.sigma = s;
            }
            if let Some(a) = alpha.or(cfg.get_f64("dirt.alpha")?) {
                p.alpha = a;
            }
            if let Some(f) = cfg.get_f64("dirt.blob_frequency")? {
                p.blob_frequency = f;
            }
            if let Some(s) = cfg.get_f64("dirt.blob_size")? {
                p.blob_size = s;
            }
            Ok(ModelParams::Dirt(p))
        }
        ModelKind::Fog => {
            let mut p = FogParams::new(beta.or(cfg.get_f64("fog.beta")?).unwrap_or(10.0));
            for (i, key) in ["fog.airlight_r", "fog.airlight_g", "fog.airlight_b"]
                .iter()
                .enumerate()
            {
                if let Some(v) = cfg.get_f64(key)? {
                    p.atmospheric_light[i] = v;
                }
            }
            Ok(ModelParams::Fog(p))
        }
        ModelKind::Composite => {
            let overlay_path: Option<PathBuf> = overlay
                .map(Path::to_path_buf)
                .or_else(|| cfg.get("paths.overlay").map(Into::into));
            let alpha_path: Option<PathBuf> = overlay_alpha
                .map(Path::to_path_buf)
                .or_else(|| cfg.get("paths.overlay_alpha").map(Into::into));
            let (Some(img_path), Some(a_path)) = (overlay_path, alpha_path) else {
                return Err(Error::Config(
                    "composite model needs --overlay and --overlay-alpha".into(),
                ));
            };
            let img = load_image(&img_path)?;
            let (w, h, words) = read_pgm16(&a_path)?;
            let plane = Plane::from_vec(w, h, words.iter().map(|&v| v as f64 / 65535.0).collect());
            Ok(ModelParams::Composite(CompositeParams::new(
                img, plane, seed,
            )?))
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_render(
    shared: Shared,
    model: Option<String>,
    sources: Option<PathBuf>,
    depth: Option<PathBuf>,
    sigma: Option<f64>,
    alpha: Option<f64>,
    beta: Option<f64>,
    udisp: Option<PathBuf>,
    vdisp: Option<PathBuf>,
    overlay: Option<PathBuf>,
    overlay_alpha: Option<PathBuf>,
) -> CliResult<ExitCode> {
    let cfg = load_config(&shared)?;
    init_threads(&cfg)?;
    let seed = master_seed(&cfg)?;
    let out = out_dir(&cfg)?;
    let kind = parse_model_kind(&cfg, model)?;

    let src_path: PathBuf = sources
        .or_else(|| cfg.get("paths.sources").map(Into::into))
        .ok_or_else(|| Error::Config("missing --sources".into()))?;
    let images = load_image_set(&src_path)?;
    let names: Vec<String> = images.iter().map(|(n, _)| n.clone()).collect();

    let depth_path: Option<PathBuf> = depth.or_else(|| cfg.get("paths.depth").map(Into::into));
    let depths = match (kind, &depth_path) {
        (ModelKind::Fog, Some(p)) => {
            let scale = cfg.get_f64("depth.meters_per_unit")?.unwrap_or(1.0);
            Some(load_depth_set(p, &names, scale)?)
        }
        (ModelKind::Fog, None) => {
            return Err(Error::Config("fog model requires --depth".into()));
        }
        _ => None,
    };

    let params = build_params(
        kind,
        &cfg,
        seed,
        sigma,
        alpha,
        beta,
        udisp.as_deref(),
        vdisp.as_deref(),
        overlay.as_deref(),
        overlay_alpha.as_deref(),
    )?;

    for (i, (name, img)) in images.iter().enumerate() {
        let mut rng = RngStream::substream(seed, stream::RENDER + i as u64);
        let ov = params.render(img, depths.as_ref().map(|d| &d[i]), &mut rng, None)?;
        let composed = occlusim::models::compose(img, &ov)?;
        save_image(&composed, &out.join(format!("{name}_rendered.png")))?;
        ov.alpha
            .save_pgm16_unit(&out.join(format!("{name}_alpha.pgm")))?;
    }
    println!("rendered {} image(s) to {}", images.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn cmd_fit(
    shared: Shared,
    model: Option<String>,
    sources: Option<PathBuf>,
    targets: Option<PathBuf>,
    depth: Option<PathBuf>,
    only_differentiable: bool,
    population: Option<usize>,
    sigma: Option<f64>,
    alpha: Option<f64>,
    beta: Option<f64>,
    udisp: Option<PathBuf>,
    vdisp: Option<PathBuf>,
) -> CliResult<ExitCode> {
    let cfg = load_config(&shared)?;
    init_threads(&cfg)?;
    let seed = master_seed(&cfg)?;
    let out = out_dir(&cfg)?;
    let kind = parse_model_kind(&cfg, model)?;

    let src_path: PathBuf = sources
        .or_else(|| cfg.get("paths.sources").map(Into::into))
        .ok_or_else(|| Error::Config("missing --sources".into()))?;
    let tgt_path: PathBuf = targets
        .or_else(|| cfg.get("paths.targets").map(Into::into))
        .ok_or_else(|| Error::Config("missing --targets".into()))?;
    let source_images = load_image_set(&src_path)?;
    let names: Vec<String> = source_images.iter().map(|(n, _)| n.clone()).collect();
    let src_imgs: Vec<Image> = source_images.into_iter().map(|(_, i)| i).collect();
    let tgt_imgs: Vec<Image> = load_image_set(&tgt_path)?
        .into_iter()
        .map(|(_, i)| i)
        .collect();

    let depth_path: Option<PathBuf> = depth.or_else(|| cfg.get("paths.depth").map(Into::into));
    let depths = match (kind, &depth_path) {
        (ModelKind::Fog, Some(p)) => {
            let scale = cfg.get_f64("depth.meters_per_unit")?.unwrap_or(1.0);
            Some(load_depth_set(p, &names, scale)?)
        }
        (ModelKind::Fog, None) => {
            return Err(Error::Config("fog model requires --depth".into()));
        }
        _ => None,
    };

    let patch = cfg.get_usize("guidance.patch_size")?.unwrap_or(8);
    let critic = critic_fit(&tgt_imgs, patch)?;
    critic.save(&out.join("target.critic"))?;

    let params = build_params(
        kind,
        &cfg,
        seed,
        sigma,
        alpha,
        beta,
        udisp.as_deref(),
        vdisp.as_deref(),
        None,
        None,
    )?;

    let mut diff_cfg = DiffEstimateConfig::for_model(&params);
    if let Some(scale) = cfg.get_f64("estimate.lr_scale")? {
        for lr in &mut diff_cfg.learning_rate {
            *lr *= scale;
        }
    }
    if let Some(n) = cfg.get_usize("estimate.max_iters")? {
        diff_cfg.max_iters = n;
    }
    if let Some(n) = cfg.get_usize("estimate.batch_size")? {
        diff_cfg.batch_size = n;
    }
    if let Some(t) = cfg.get_f64("estimate.tol")? {
        diff_cfg.tol = t;
    }

    let mut joint_cfg = JointConfig::default();
    if let Some(p) = population.or(cfg.get_usize("estimate.population")?) {
        joint_cfg.population = p;
    }
    if let Some(n) = cfg.get_usize("estimate.n_samples")? {
        joint_cfg.fitness = FitnessSpec { n_samples: n };
    }
    if let Some(n) = cfg.get_usize("estimate.k_d")? {
        joint_cfg.k_d = n;
    }
    if let Some(n) = cfg.get_usize("estimate.k_g")? {
        joint_cfg.k_g = n;
    }
    if let Some(n) = cfg.get_usize("estimate.max_rounds")? {
        joint_cfg.max_rounds = n;
    }
    if let Some(ws) = cfg.get_f64_list("estimate.warm_start")? {
        joint_cfg.warm_start = Some(ws);
    }
    let only_diff = only_differentiable
        || cfg
            .get_bool("estimate.only_differentiable")?
            .unwrap_or(false)
        || params.nd_desc().is_empty();

    let mut srcs = Sources::new(&src_imgs);
    if let Some(d) = depths.as_deref() {
        srcs = srcs.with_depths(d);
    }

    let mut rng = RngStream::substream(seed, stream::ESTIMATE);
    let mut trace: Vec<TraceRow> = Vec::new();
    let result = if only_diff {
        estimate_differentiable(&params, &srcs, &critic, &diff_cfg, &mut rng, 0, &mut trace)
            .map(|est| (params.with_diff(&est.values), est.loss))
    } else {
        estimate_joint(
            &params, &srcs, &critic, &diff_cfg, &joint_cfg, &mut rng, &mut trace,
        )
        .map(|est| (est.params, est.loss))
    };

    // The trace is flushed even when estimation aborts (exit code 3).
    let trace_names: Vec<String> = if only_diff {
        params
            .diff_desc()
            .iter()
            .map(|d| d.name.to_string())
            .collect()
    } else {
        params.named_values().into_iter().map(|(n, _)| n).collect()
    };
    write_trace_csv(&out.join("trace.csv"), &trace, &trace_names)?;

    let (fitted, loss) = result?;
    let mut lines = String::new();
    for (name, value) in fitted.named_values() {
        lines.push_str(&format!("{name}={value}\n"));
    }
    lines.push_str(&format!("loss={loss}\n"));
    std::fs::write(out.join("params.out"), lines)
        .map_err(|e| Error::io(out.join("params.out"), e))?;
    println!("fitted {} with loss {loss:.6}", fitted.kind().name());
    Ok(ExitCode::SUCCESS)
}

fn cmd_guidance(
    shared: Shared,
    sources: Option<PathBuf>,
    targets: Option<PathBuf>,
    critic_path: Option<PathBuf>,
    gamma: Option<f64>,
) -> CliResult<ExitCode> {
    let cfg = load_config(&shared)?;
    init_threads(&cfg)?;
    let out = out_dir(&cfg)?;

    let src_path: PathBuf = sources
        .or_else(|| cfg.get("paths.sources").map(Into::into))
        .ok_or_else(|| Error::Config("missing --sources".into()))?;
    let sources: Vec<Image> = load_image_set(&src_path)?
        .into_iter()
        .map(|(_, i)| i)
        .collect();

    let critic = match critic_path {
        Some(p) => Critic::load(&p)?,
        None => {
            let tgt_path: PathBuf = targets
                .or_else(|| cfg.get("paths.targets").map(Into::into))
                .ok_or_else(|| {
                    Error::Config("guidance needs --critic or --targets to fit one".into())
                })?;
            let tgt: Vec<Image> = load_image_set(&tgt_path)?
                .into_iter()
                .map(|(_, i)| i)
                .collect();
            let patch = cfg.get_usize("guidance.patch_size")?.unwrap_or(8);
            critic_fit(&tgt, patch)?
        }
    };

    let gamma = gamma.or(cfg.get_f64("guidance.gamma")?).unwrap_or(0.75);
    let dg = compute_guidance(&critic, &sources)?;
    let mask = injection_mask(&dg, gamma)?;
    dg.save_pgm(&out.join("dg.pgm"))?;
    mask.save_pbm(&out.join(format!("mask_gamma{gamma}.pbm")))?;
    println!(
        "guidance map written; gamma {gamma} admits {:.1}% of pixels",
        100.0 * mask.count_true() as f64 / (mask.width() * mask.height()) as f64
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(shared: Shared, models: Option<String>, seeds: Option<String>) -> CliResult<ExitCode> {
    let cfg = load_config(&shared)?;
    init_threads(&cfg)?;
    let master = master_seed(&cfg)?;
    let out = out_dir(&cfg)?;

    let model_list: Vec<String> = models
        .map(|m| m.split(',').map(|s| s.trim().to_string()).collect())
        .or_else(|| cfg.get_str_list("bench.models"))
        .unwrap_or_else(|| vec!["raindrop".into(), "dirt".into(), "fog".into()]);
    let seeds: Vec<u64> = match seeds {
        Some(s) => s
            .split(',')
            .map(|x| {
                x.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad seed '{x}'")))
            })
            .collect::<CliResult<_>>()?,
        None => cfg.get_u64_list("bench.seeds")?.unwrap_or(vec![1, 2, 3]),
    };

    let width = cfg.get_usize("bench.width")?.unwrap_or(128);
    let height = cfg.get_usize("bench.height")?.unwrap_or(128);
    let count = cfg.get_usize("bench.count")?.unwrap_or(64);
    let (clean, depths) = generate_corpus(width, height, count, master ^ stream::BENCH);

    let mut all_reports: Vec<RecoveryReport> = Vec::new();
    let mut failures = 0usize;
    println!("model     parameter  truth      mean-est   mean-err%  tolerance");

    for name in &model_list {
        let kind = ModelKind::parse(name)?;
        let (cases, tolerance): (Vec<RecoveryCase>, f64) = match kind {
            ModelKind::Raindrop => (
                [1.0, 2.0, 4.0, 8.0]
                    .iter()
                    .map(|&s| RecoveryCase {
                        truth: bench::default_truth(kind, 0).with_diff(&[s]),
                        parameter: "sigma",
                        init: 0.5,
                    })
                    .collect(),
                10.0,
            ),
            ModelKind::Dirt => (
                [0.2, 0.4, 0.6, 0.8]
                    .iter()
                    .map(|&a| {
                        let mut t = DirtParams::bench_default(0);
                        t.alpha = a;
                        RecoveryCase {
                            truth: ModelParams::Dirt(t),
                            parameter: "alpha",
                            init: 0.1,
                        }
                    })
                    .collect(),
                10.0,
            ),
            ModelKind::Fog => (
                [5.0, 10.0, 20.0, 40.0]
                    .iter()
                    .map(|&b| RecoveryCase {
                        truth: ModelParams::Fog(FogParams::new(b)),
                        parameter: "beta",
                        init: 2.0,
                    })
                    .collect(),
                30.0,
            ),
            ModelKind::Composite => {
                return Err(Error::Config(
                    "composite has no estimated parameters to benchmark".into(),
                ))
            }
        };

        let mut model_errs: Vec<f64> = Vec::new();
        for case in &cases {
            let est_cfg = DiffEstimateConfig::for_model(&case.truth);
            let depths_opt = matches!(kind, ModelKind::Fog).then_some(&depths[..]);
            let reports = run_recovery(&clean, depths_opt, case, &est_cfg, &seeds)?;
            let mean_est = reports.iter().map(|r| r.estimated).sum::<f64>() / reports.len() as f64;
            let mean_err =
                reports.iter().map(|r| r.percent_error).sum::<f64>() / reports.len() as f64;
            let truth = reports[0].ground_truth;
            println!(
                "{:<9} {:<10} {:<10.4} {:<10.4} {:<10.2} <= {:.0}%",
                name, case.parameter, truth, mean_est, mean_err, tolerance
            );
            model_errs.push(mean_err);
            all_reports.extend(reports);
        }
        let sweep_mean = model_errs.iter().sum::<f64>() / model_errs.len() as f64;
        if sweep_mean > tolerance {
            failures += 1;
            println!("{name}: FAIL mean error {sweep_mean:.2}% over tolerance {tolerance:.0}%");
        } else {
            println!("{name}: PASS mean error {sweep_mean:.2}%");
        }
    }

    bench::write_recovery_csv(&out.join("recovery.csv"), &all_reports)?;

    // Landscape sweep for the first benched model's leading parameter.
    if let Some(name) = model_list.first() {
        let kind = ModelKind::parse(name)?;
        if kind != ModelKind::Composite {
            let truth = bench::default_truth(kind, 0);
            let (half_src, half_tgt) = clean.split_at(clean.len() / 2);
            let (dsrc, dtgt) = depths.split_at(clean.len() / 2);
            let targets = bench::synthesize_ground_truth(
                half_tgt,
                matches!(kind, ModelKind::Fog).then_some(dtgt),
                &truth,
                &mut RngStream::substream(master, stream::LANDSCAPE),
            )?;
            let desc = truth.diff_desc()[0];
            let center = truth.diff_values()[0];
            let grid: Vec<f64> = (0..11)
                .map(|i| center * (0.25 + 1.5 * i as f64 / 10.0))
                .collect();
            let rows = sweep_landscape(
                half_src,
                matches!(kind, ModelKind::Fog).then_some(dsrc),
                &targets,
                &truth,
                desc.name,
                &grid,
                master,
            )?;
            bench::write_landscape_csv(&out.join("landscape.csv"), &rows)?;
        }
    }

    println!(
        "bench wrote {} and {}",
        out.join("recovery.csv").display(),
        out.join("landscape.csv").display()
    );
    if failures > 0 {
        Ok(ExitCode::from(1))
    } else {
        Ok(ExitCode::SUCCESS)
    }
}

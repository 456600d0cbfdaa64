//! `lfdense` — light-field densification toolkit.
//!
//! Subcommands: `synth` (render a synthetic light field), `analyze`
//! (aliasing analysis / pre-filter design sweep), `decompose` (EPI pyramid),
//! `train` (pretrain or fine-tune the network), `reconstruct` (densify a
//! light field), `eval` (PSNR/SSIM report).
//!
//! Exit codes: 0 success, 1 domain error (one-line diagnostic on stderr),
//! 2 usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use lfdense::io::{
    atomic_write, load_epi_png, load_lightfield, save_epi_png, save_lightfield, save_signed_png,
};
use lfdense::lightfield::EpiAxis;
use lfdense::metrics::{evaluate, synthesized_mask};
use lfdense::net::checkpoint::load_checkpoint;
use lfdense::par::Pool;
use lfdense::pyramid::{build_lapepi, collapse, pad_width_reflect, PyramidConfig};
use lfdense::reconstruct::{reconstruct_lf3d, reconstruct_lf4d, ChannelPolicy, ReconConfig};
use lfdense::scene::{alias_demo_scene, layered_scene, synth_lightfield};
use lfdense::spectrum::sweep;
use lfdense::train::{
    default_checkpoint_dir, run_stage, write_loss_trace, SampleSource, SourceKind, Stage,
    TrainConfig,
};

#[derive(Parser)]
#[command(name = "lfdense", version, about = "Light-field densification toolkit")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// RNG seed for anything stochastic.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for data-parallel stages (0 = all cores).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Print more progress detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic light field into a view directory.
    Synth(SynthArgs),
    /// Aliasing analysis: sweep pre-filter shape over scales and betas.
    Analyze(AnalyzeArgs),
    /// Decompose an EPI into its multi-scale structure.
    Decompose(DecomposeArgs),
    /// Train the reconstruction network.
    Train(TrainArgs),
    /// Densify a light field with a trained checkpoint.
    Reconstruct(ReconstructArgs),
    /// Compare a reconstruction against ground truth.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output light-field directory.
    #[arg(long)]
    out: PathBuf,
    /// Scene kind.
    #[arg(long, value_enum, default_value_t = SceneKind::Layers)]
    scene: SceneKind,
    /// Comma-separated layer disparities (pixels per view step).
    #[arg(long, default_value = "0.5,2,9")]
    disparities: String,
    /// Views along the s axis.
    #[arg(long, default_value_t = 7)]
    views: usize,
    /// View width in pixels.
    #[arg(long, default_value_t = 96)]
    width: usize,
    /// View height in pixels.
    #[arg(long, default_value_t = 24)]
    height: usize,
    /// Also save the central horizontal EPI as a grayscale PNG.
    #[arg(long)]
    epi_out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SceneKind {
    /// Seeded layered scene with the given disparities.
    Layers,
    /// The fixed aliasing-analysis demonstration scene (d_max = 9).
    Toy,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Input EPI as a grayscale PNG (rows = views).
    #[arg(long)]
    epi: PathBuf,
    /// Largest disparity of the EPI, pixels per view step.
    #[arg(long)]
    dmax: f64,
    /// Angular decimation rate that produced the EPI.
    #[arg(long, default_value_t = 3)]
    rate: usize,
    /// Comma-separated spatial downsampling scales (powers of two, from 1).
    #[arg(long, default_value = "1,2,4")]
    scales: String,
    /// Comma-separated amplitude scales in [10, 300].
    #[arg(long, default_value = "10,100,300")]
    betas: String,
    /// Apply a Hann window along the spatial axis (for non-periodic images).
    #[arg(long)]
    hann: bool,
    /// Output CSV path.
    #[arg(long, default_value = "alias_report.csv")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DecomposeArgs {
    /// Input EPI as a grayscale PNG.
    #[arg(long)]
    epi: PathBuf,
    /// Pyramid levels.
    #[arg(long, default_value_t = 3)]
    levels: usize,
    /// Spatial scale gap between levels.
    #[arg(long, default_value_t = 2)]
    alpha: usize,
    /// Residual blur kernel sizes, one per level from 2 up.
    #[arg(long, default_value = "5,13")]
    kernels: String,
    /// Output directory for per-level PNGs and the shape report.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training stage.
    #[arg(long, value_enum)]
    stage: StageArg,
    /// Directory of training sources.
    #[arg(long)]
    sources: PathBuf,
    /// How to read the sources directory.
    #[arg(long, value_enum, default_value_t = SourceKindArg::Epi)]
    kind: SourceKindArg,
    /// Optimization steps.
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    /// Mini-batch size.
    #[arg(long, default_value_t = 28)]
    batch: usize,
    /// Checkpoint output path (defaults to $LFDENSE_CKPT_DIR/model.ckpt).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Initial checkpoint (required for fine-tuning).
    #[arg(long)]
    init: Option<PathBuf>,
    /// Loss trace CSV path.
    #[arg(long, default_value = "loss_trace.csv")]
    trace: PathBuf,
    /// Stop early when the batch loss drops below this value.
    #[arg(long)]
    stop_below: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StageArg {
    Pretrain,
    Finetune,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SourceKindArg {
    /// PNGs read as natural images (vertical axis = angular).
    Natural,
    /// PNGs read as EPIs.
    Epi,
    /// Light-field directories; every horizontal EPI becomes a source.
    Lf,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    /// Input light-field directory.
    #[arg(long)]
    lf: PathBuf,
    /// Trained checkpoint.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Angular upsampling factor.
    #[arg(long, default_value_t = 3)]
    alpha: usize,
    /// Grid mode: 3d densifies s only, 4d densifies both axes.
    #[arg(long, value_enum, default_value_t = ModeArg::D3)]
    mode: ModeArg,
    /// Run every RGB channel through the network instead of luma-only.
    #[arg(long)]
    rgb: bool,
    /// Copy the input views verbatim into their output positions.
    #[arg(long)]
    copy_inputs: bool,
    /// Output light-field directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    #[value(name = "3d")]
    D3,
    #[value(name = "4d")]
    D4,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Reconstructed light-field directory.
    #[arg(long)]
    recon: PathBuf,
    /// Ground-truth light-field directory.
    #[arg(long)]
    truth: PathBuf,
    /// Angular factor defining the input lattice to exclude from averages.
    #[arg(long, default_value_t = 3)]
    alpha: usize,
    /// Output CSV path.
    #[arg(long, default_value = "report.csv")]
    out: PathBuf,
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|x| x.trim().parse::<T>().map_err(|_| anyhow::anyhow!("bad {what} entry {x:?}")))
        .collect()
}

fn resolve_checkpoint(arg: &Option<PathBuf>, for_write: bool) -> Result<PathBuf> {
    if let Some(p) = arg {
        return Ok(p.clone());
    }
    match default_checkpoint_dir() {
        Some(dir) => {
            if for_write {
                std::fs::create_dir_all(&dir)?;
            }
            Ok(dir.join("model.ckpt"))
        }
        None => bail!("no checkpoint path given and LFDENSE_CKPT_DIR is not set"),
    }
}

fn cmd_synth(global: &GlobalArgs, args: &SynthArgs) -> Result<()> {
    let spec = match args.scene {
        SceneKind::Toy => alias_demo_scene(),
        SceneKind::Layers => {
            let disparities: Vec<f64> = parse_list(&args.disparities, "disparity")?;
            layered_scene(&disparities, args.views, args.width, args.height, global.seed)?
        }
    };
    let lf = synth_lightfield(&spec)?;
    save_lightfield(&lf, &args.out)?;
    println!(
        "wrote {}x{} views of {}x{} px to {}",
        lf.n_t(),
        lf.n_s(),
        lf.n_u(),
        lf.n_v(),
        args.out.display()
    );
    if let Some(epi_path) = &args.epi_out {
        let epi = lf.extract_epi(EpiAxis::US, lf.n_v() / 2, 0, 0)?;
        save_epi_png(&epi, epi_path)?;
        println!("wrote central EPI ({}x{}) to {}", epi.n_a(), epi.n_w(), epi_path.display());
    }
    Ok(())
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<()> {
    let epi = load_epi_png(&args.epi, EpiAxis::US)?;
    let scales: Vec<usize> = parse_list(&args.scales, "scale")?;
    let betas: Vec<f64> = parse_list(&args.betas, "beta")?;
    let report = sweep(&epi, &scales, &betas, args.rate, args.dmax, args.hann)?;
    atomic_write(&args.out, report.to_csv().as_bytes())?;
    println!(
        "wrote {} rows (d_max {}, rate {}, hann {}) to {}",
        report.rows.len(),
        report.d_max,
        report.angular_rate,
        report.hann_window,
        args.out.display()
    );
    Ok(())
}

fn cmd_decompose(args: &DecomposeArgs) -> Result<()> {
    let epi = load_epi_png(&args.epi, EpiAxis::US)?;
    let kernels: Vec<usize> = parse_list(&args.kernels, "kernel size")?;
    let cfg = PyramidConfig { levels: args.levels, alpha_s: args.alpha, level_kernel_sizes: kernels };
    let (padded, left, right) = pad_width_reflect(&epi, cfg.scale_factor());
    let pyr = build_lapepi(&padded, &cfg)?;
    std::fs::create_dir_all(&args.out)?;
    save_epi_png(&pyr.level1, &args.out.join("level1.png"))?;
    let mut report = format!(
        "input {}x{} (padded +{left}+{right} to {})\nlevel1 {}x{}\n",
        epi.n_a(),
        epi.n_w(),
        padded.n_w(),
        pyr.level1.n_a(),
        pyr.level1.n_w()
    );
    for (i, (res, resb)) in pyr.residuals.iter().enumerate() {
        let p = i + 2;
        // residuals are signed; PNGs map [-1,1] to [0,1]
        save_signed_png(res.data(), &args.out.join(format!("level{p}_residual.png")))?;
        save_signed_png(resb.data(), &args.out.join(format!("level{p}_residual_blurred.png")))?;
        report.push_str(&format!(
            "level{p} residual pair {}x{} (blur kernel {})\n",
            res.n_a(),
            res.n_w(),
            cfg.level_kernel_sizes[i]
        ));
    }
    let rec = collapse(&pyr);
    let err = rec
        .data()
        .iter()
        .zip(padded.data().iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    report.push_str(&format!("reconstruction max abs error {err:.3e}\n"));
    atomic_write(&args.out.join("shapes.txt"), report.as_bytes())?;
    println!("decomposed into {} levels under {}", cfg.levels, args.out.display());
    Ok(())
}

fn load_sources(dir: &Path, kind: SourceKindArg) -> Result<Vec<SampleSource>> {
    let mut sources = Vec::new();
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .collect();
    entries.sort();
    match kind {
        SourceKindArg::Natural | SourceKindArg::Epi => {
            let sk = if matches!(kind, SourceKindArg::Natural) {
                SourceKind::NaturalImage
            } else {
                SourceKind::Epi
            };
            for path in entries {
                if path.extension().is_some_and(|e| e == "png") {
                    let epi = load_epi_png(&path, EpiAxis::US)?;
                    sources.push(SampleSource { kind: sk, data: epi.into_data() });
                }
            }
        }
        SourceKindArg::Lf => {
            for path in entries {
                if path.is_dir() && path.join("manifest.json").exists() {
                    let lf = load_lightfield(&path)?;
                    let luma = if lf.colorspace() == lfdense::lightfield::Colorspace::Rgb {
                        lfdense::lightfield::rgb_to_ycbcr(&lf)?
                    } else {
                        lf
                    };
                    for t in 0..luma.n_t() {
                        for v in 0..luma.n_v() {
                            let epi = luma.extract_epi(EpiAxis::US, v, t, 0)?;
                            sources.push(SampleSource { kind: SourceKind::Epi, data: epi.into_data() });
                        }
                    }
                }
            }
        }
    }
    Ok(sources)
}

fn cmd_train(global: &GlobalArgs, args: &TrainArgs) -> Result<()> {
    let sources = load_sources(&args.sources, args.kind)?;
    let mut cfg = match args.stage {
        StageArg::Pretrain => TrainConfig::pretrain(global.seed, args.steps),
        StageArg::Finetune => TrainConfig::finetune(global.seed, args.steps),
    };
    cfg.batch = args.batch;
    cfg.stop_below_loss = args.stop_below;
    let initial = match &args.init {
        Some(path) => Some(load_checkpoint(path)?),
        None => None,
    };
    if cfg.stage == Stage::Finetune && initial.is_none() {
        bail!("--stage finetune requires --init with the pretrain checkpoint");
    }
    let ckpt = resolve_checkpoint(&args.checkpoint, true)?;
    let pyramid = PyramidConfig::default();
    println!(
        "training {:?} on {} sources ({} steps, batch {}, lr {}/{})",
        args.stage,
        sources.len(),
        cfg.max_steps,
        cfg.batch,
        cfg.lr_conv,
        cfg.lr_deconv
    );
    let out = run_stage(&sources, &cfg, &pyramid, initial, Some(&ckpt))?;
    write_loss_trace(&out.trace, &args.trace)?;
    println!(
        "ran {} steps over {} pairs ({} sources skipped); final loss {:.6}",
        out.steps_run,
        out.pairs_used,
        out.sources_skipped,
        out.trace.last().map(|&(_, l)| l).unwrap_or(f64::NAN)
    );
    println!("checkpoint: {}", ckpt.display());
    println!("loss trace: {}", args.trace.display());
    Ok(())
}

fn cmd_reconstruct(global: &GlobalArgs, args: &ReconstructArgs) -> Result<()> {
    let lf = load_lightfield(&args.lf)?;
    let ckpt_path = resolve_checkpoint(&args.ckpt, false)?;
    let params = load_checkpoint(&ckpt_path)?;
    let cfg = ReconConfig {
        alpha_a: args.alpha,
        pyramid: params.pyramid.clone(),
        policy: if args.rgb { ChannelPolicy::FullRgb } else { ChannelPolicy::LumaOnly },
        copy_input_views: args.copy_inputs,
    };
    let pool = Pool::new(global.threads);
    let out = match args.mode {
        ModeArg::D3 => reconstruct_lf3d(&lf, &params, &cfg, &pool),
        ModeArg::D4 => reconstruct_lf4d(&lf, &params, &cfg, &pool),
    }?;
    save_lightfield(&out, &args.out)?;
    println!(
        "densified {}x{} -> {}x{} views into {}",
        lf.n_t(),
        lf.n_s(),
        out.n_t(),
        out.n_s(),
        args.out.display()
    );
    Ok(())
}

fn cmd_eval(global: &GlobalArgs, args: &EvalArgs) -> Result<()> {
    let recon = load_lightfield(&args.recon)?;
    let truth = load_lightfield(&args.truth)?;
    let mask = synthesized_mask(recon.n_t(), recon.n_s(), args.alpha);
    let pool = Pool::new(global.threads);
    let mut report = evaluate(&recon, &truth, &mask, &pool)?;
    report.scene = args.truth.display().to_string();
    report.alpha_a = args.alpha;
    report.checkpoint = String::new();
    atomic_write(&args.out, report.to_csv().as_bytes())?;
    match report.avg_psnr_db {
        Some(db) => println!(
            "{} synthesized views: average PSNR {:.3} dB, SSIM {:.5} ({} identical)",
            report.rows.len(),
            db,
            report.avg_ssim,
            report.n_identical
        ),
        None => println!(
            "{} synthesized views: all identical to ground truth (SSIM {:.5})",
            report.rows.len(),
            report.avg_ssim
        ),
    }
    println!("report: {}", args.out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(args) => cmd_synth(&cli.global, args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Decompose(args) => cmd_decompose(args),
        Command::Train(args) => cmd_train(&cli.global, args),
        Command::Reconstruct(args) => cmd_reconstruct(&cli.global, args),
        Command::Eval(args) => cmd_eval(&cli.global, args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    // resolved configuration and version, before any work
    println!("lfdense {}", env!("CARGO_PKG_VERSION"));
    println!(
        "config: seed={} threads={} verbose={} command={:?}",
        cli.global.seed, cli.global.threads, cli.global.verbose, cli.command
    );
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

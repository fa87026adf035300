use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use vdcompress::distill::{distill, DistillConfig, DistillRecord, TeacherBinding};
use vdcompress::io::{
    load_dataset, read_clip, read_frame_folder, read_model, write_clip, write_frame_folder, write_model,
};
use vdcompress::metrics::MetricReport;
use vdcompress::net::{EncoderDecoderLayout, Model, NetworkSpec};
use vdcompress::noise::{mix_seed, Corruption};
use vdcompress::planner::{
    analyze_sparsity, apply_plan, plan_channels, profile_from_csv, profile_to_csv, uniform_profile, PruningPlan,
};
use vdcompress::scene::synth_clip;
use vdcompress::sparsity::{train_sparse, SparseRecord, SparsityConfig};
use vdcompress::train::{evaluate, ClipPool};
use vdcompress::{Clip, Frame};

#[derive(Parser)]
#[command(name = "vdc", version, about = "Compress and evaluate temporal video denoisers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corrupt a clean clip with synthetic camera noise.
    Noise(NoiseArgs),
    /// Write a synthetic clean clip.
    Synth(SynthArgs),
    /// Sparse training with a proximal L1 step.
    TrainSparse(TrainSparseArgs),
    /// Per-layer sparsity profile of trained weights, as CSV.
    Analyze(AnalyzeArgs),
    /// Turn a sparsity profile into a channel pruning plan.
    Plan(PlanArgs),
    /// Apply a pruning plan to weights.
    Prune(PruneArgs),
    /// Distil a teacher into a student network.
    Distill(DistillArgs),
    /// PSNR/SSIM between two clips, or of a model on a dataset.
    Eval(EvalArgs),
    /// Time the five-frame forward pass.
    Bench(BenchArgs),
    /// Print the parameter count of a network spec.
    CountParams(CountArgs),
    /// Write a network spec for a built-in layout.
    Layout(LayoutArgs),
}

#[derive(Args)]
struct LayoutArgs {
    /// The full-size reference layout.
    #[arg(long, conflicts_with_all = ["mini", "from"], required_unless_present_any = ["mini", "from"])]
    reference: bool,
    /// A small layout with widths W, 2W, 4W.
    #[arg(long, value_name = "W", conflicts_with = "from")]
    mini: Option<usize>,
    /// Start from an existing spec file.
    #[arg(long)]
    from: Option<PathBuf>,
    /// Drop the noise-map inputs.
    #[arg(long)]
    no_noise_map: bool,
    #[arg(long)]
    name: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset directory of PNG frame folders and .pdvd clips.
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Use this many synthetic scenes instead of a dataset.
    #[arg(long)]
    synthetic: Option<usize>,
    /// Square crop size (also the synthetic scene size).
    #[arg(long, default_value_t = 32)]
    patch: usize,
    /// Crop stride; defaults to the patch size.
    #[arg(long)]
    stride: Option<usize>,
}

impl DataArgs {
    fn pool(&self, seed: u64) -> Result<ClipPool> {
        let items = match (&self.data, self.synthetic) {
            (Some(dir), _) => load_dataset(dir, self.patch, self.stride.unwrap_or(self.patch), seed)
                .with_context(|| format!("loading dataset {}", dir.display()))?,
            (None, Some(n)) => return Ok(ClipPool::synthetic(n, self.patch, seed)?),
            (None, None) => bail!("give --data <dir> or --synthetic <count>"),
        };
        Ok(ClipPool::new(items)?)
    }
}

#[derive(Args)]
struct NoiseArgs {
    /// Clean clip: a .pdvd file or a folder of PNG frames.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Corruption config; defaults to the physics model with default ranges.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also write the center-frame noise-level map as a one-frame clip.
    #[arg(long)]
    map_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    /// Output .pdvd file, or a directory of PNG frames with --png.
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    png: bool,
    #[arg(long, default_value_t = 5)]
    frames: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainSparseArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Starting weights; a fresh initialisation from the seed otherwise.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    /// Override the configured step count.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Per-step CSV log; stdout if absent.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    /// Weights with magnitude at or below this count as zero.
    #[arg(long, default_value_t = 0.0)]
    zero_tol: f32,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Sparsity profile CSV from `analyze`.
    #[arg(long, conflicts_with = "ratio", required_unless_present = "ratio")]
    profile: Option<PathBuf>,
    /// Plan as if every prunable layer kept this fraction of its weights.
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the pruned network spec.
    #[arg(long)]
    out_spec: Option<PathBuf>,
    #[arg(long, default_value = "pruned")]
    name: String,
}

#[derive(Args)]
struct PruneArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    out_spec: PathBuf,
    #[arg(long)]
    out_weights: PathBuf,
    /// Write the plan with the selected channel indices.
    #[arg(long)]
    out_plan: Option<PathBuf>,
    #[arg(long, default_value = "pruned")]
    name: String,
}

#[derive(Args)]
struct DistillArgs {
    /// Student spec; it must not take a noise map.
    #[arg(long)]
    student: PathBuf,
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Network teacher spec (with --teacher-weights).
    #[arg(long, requires = "teacher_weights")]
    teacher_spec: Option<PathBuf>,
    #[arg(long, requires = "teacher_spec")]
    teacher_weights: Option<PathBuf>,
    /// Directory of precomputed teacher outputs keyed by clip id.
    #[arg(long, conflicts_with_all = ["teacher_spec", "oracle"])]
    teacher_dir: Option<PathBuf>,
    /// Use the ground truth as the teacher.
    #[arg(long, conflicts_with = "teacher_spec")]
    oracle: bool,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Reconstruction clip.
    #[arg(long, requires = "b", conflicts_with = "spec")]
    a: Option<PathBuf>,
    /// Reference clip.
    #[arg(long, requires = "a")]
    b: Option<PathBuf>,
    /// Per-frame CSV report for clip comparison.
    #[arg(long, requires = "a")]
    csv: Option<PathBuf>,
    #[arg(long, requires = "weights")]
    spec: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Corruption config for model evaluation.
    #[arg(long)]
    noise: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    height: usize,
    #[arg(long, default_value_t = 128)]
    width: usize,
    #[arg(long, default_value_t = 50)]
    iters: usize,
    #[arg(long, default_value_t = 3)]
    warmup: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CountArgs {
    #[arg(long)]
    spec: PathBuf,
}

fn load_spec(path: &Path) -> Result<NetworkSpec> {
    NetworkSpec::load(path).with_context(|| format!("reading spec {}", path.display()))
}

fn load_or_build(spec: &NetworkSpec, init: Option<&Path>, seed: u64) -> Result<Model> {
    Ok(match init {
        Some(p) => read_model(p, spec).with_context(|| format!("reading weights {}", p.display()))?,
        None => Model::build(spec, mix_seed(seed, &[0x1417]))?,
    })
}

fn read_any_clip(path: &Path) -> Result<Clip> {
    let clip = if path.is_dir() {
        read_frame_folder(path)?
    } else {
        read_clip(path)?
    };
    Ok(clip)
}

fn writer(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Noise(a) => {
            let clip = read_any_clip(&a.input)?;
            let corruption = match &a.config {
                Some(p) => Corruption::load(p)?,
                None => Corruption::default(),
            };
            let (noisy, map) = corruption.apply(&clip, a.seed)?;
            write_clip(&a.output, &noisy)?;
            if let Some(p) = &a.map_out {
                let mut m = map;
                m.clamp01();
                write_clip(p, &Clip::from_frames(std::slice::from_ref(&m))?)?;
            }
        }
        Command::Synth(a) => {
            let clip = synth_clip(a.frames, a.height, a.width, a.seed)?;
            if a.png {
                write_frame_folder(&a.output, &clip)?;
            } else {
                write_clip(&a.output, &clip)?;
            }
        }
        Command::TrainSparse(a) => {
            let spec = load_spec(&a.spec)?;
            let mut cfg = match &a.config {
                Some(p) => SparsityConfig::load(p)?,
                None => SparsityConfig::default(),
            };
            cfg.total_steps = a.steps.unwrap_or(cfg.total_steps);
            cfg.batch_size = a.batch_size.unwrap_or(cfg.batch_size);
            let pool = a.data.pool(a.seed)?;
            let mut model = load_or_build(&spec, a.init.as_deref(), a.seed)?;
            let mut log = writer(a.log.as_deref())?;
            writeln!(log, "{}", SparseRecord::CSV_HEADER)?;
            let mut io_err = None;
            train_sparse(&mut model, &pool, &cfg, a.seed, |r| {
                if let Err(e) = writeln!(log, "{}", r.csv_row()) {
                    io_err.get_or_insert(e);
                }
            })?;
            if let Some(e) = io_err {
                return Err(e.into());
            }
            log.flush()?;
            write_model(&a.out, &model)?;
        }
        Command::Analyze(a) => {
            let spec = load_spec(&a.spec)?;
            let model = read_model(&a.weights, &spec)?;
            let csv = profile_to_csv(&analyze_sparsity(&model, a.zero_tol)?);
            let mut out = writer(a.out.as_deref())?;
            out.write_all(csv.as_bytes())?;
            out.flush()?;
        }
        Command::Plan(a) => {
            let spec = load_spec(&a.spec)?;
            let profile = match (&a.profile, a.ratio) {
                (Some(p), _) => {
                    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    profile_from_csv(&text)?
                }
                (None, Some(r)) => uniform_profile(&spec, r),
                (None, None) => unreachable!("clap requires one of them"),
            };
            let plan = plan_channels(&profile, &spec)?;
            plan.save(&a.out)?;
            if let Some(p) = &a.out_spec {
                plan.pruned_spec(&spec, &a.name)?.save(p)?;
            }
            println!("{} -> {} parameters", spec.count_params(), plan.predicted_params);
        }
        Command::Prune(a) => {
            let spec = load_spec(&a.spec)?;
            let model = read_model(&a.weights, &spec)?;
            let plan = PruningPlan::load(&a.plan)?;
            let (pruned, filled) = apply_plan(&model, &plan, &a.name)?;
            pruned.spec().save(&a.out_spec)?;
            write_model(&a.out_weights, &pruned)?;
            if let Some(p) = &a.out_plan {
                filled.save(p)?;
            }
            println!("{} -> {} parameters", model.count_params(), pruned.count_params());
        }
        Command::Distill(a) => {
            let spec = load_spec(&a.student)?;
            let mut cfg = match &a.config {
                Some(p) => DistillConfig::load(p)?,
                None => DistillConfig::default(),
            };
            cfg.total_steps = a.steps.unwrap_or(cfg.total_steps);
            cfg.batch_size = a.batch_size.unwrap_or(cfg.batch_size);
            if let (Some(spec), Some(weights)) = (&a.teacher_spec, &a.teacher_weights) {
                cfg.teacher = TeacherBinding::Network {
                    spec: spec.clone(),
                    weights: weights.clone(),
                };
            } else if let Some(dir) = &a.teacher_dir {
                cfg.teacher = TeacherBinding::Files { dir: dir.clone() };
            } else if a.oracle {
                cfg.teacher = TeacherBinding::Oracle;
            }
            let teacher = cfg.teacher.load()?;
            let pool = a.data.pool(a.seed)?;
            let mut student = load_or_build(&spec, a.init.as_deref(), a.seed)?;
            let mut log = writer(a.log.as_deref())?;
            writeln!(log, "{}", DistillRecord::CSV_HEADER)?;
            let mut io_err = None;
            distill(&mut student, teacher.as_ref(), &pool, &cfg, a.seed, |r| {
                if let Err(e) = writeln!(log, "{}", r.csv_row()) {
                    io_err.get_or_insert(e);
                }
            })?;
            if let Some(e) = io_err {
                return Err(e.into());
            }
            log.flush()?;
            write_model(&a.out, &student)?;
        }
        Command::Eval(a) => {
            if let (Some(x), Some(y)) = (&a.a, &a.b) {
                let report = MetricReport::for_clips(&read_any_clip(x)?, &read_any_clip(y)?)?;
                println!("PSNR {:.4} dB", report.psnr_db);
                println!("SSIM {:.6}", report.ssim);
                if let Some(p) = &a.csv {
                    std::fs::write(p, report.to_csv()).with_context(|| format!("writing {}", p.display()))?;
                }
            } else if let (Some(spec), Some(weights)) = (&a.spec, &a.weights) {
                let spec = load_spec(spec)?;
                let model = read_model(weights, &spec)?;
                let corruption = match &a.noise {
                    Some(p) => Corruption::load(p)?,
                    None => Corruption::default(),
                };
                let batch = a.data.pool(a.seed)?.all(a.seed, &corruption)?;
                let r = evaluate(&model, &batch)?;
                println!("clips {}", r.clips);
                println!("noisy PSNR {:.4} dB", r.noisy_psnr_db);
                println!("denoised PSNR {:.4} dB", r.denoised_psnr_db);
                println!("gain {:.4} dB", r.gain_db());
            } else {
                bail!("give --a/--b clips or --spec/--weights with a dataset");
            }
        }
        Command::Bench(a) => {
            if a.iters < 50 {
                bail!("bench needs at least 50 timed iterations");
            }
            let spec = load_spec(&a.spec)?;
            let model = load_or_build(&spec, a.weights.as_deref(), a.seed)?;
            let clip = synth_clip(5, a.height, a.width, a.seed)?;
            let (c, h, w) = (clip.channels(), clip.height(), clip.width());
            let map = spec.noise_map_input.then(|| Frame::filled(c, h, w, 0.05));
            for _ in 0..a.warmup {
                model.forward_cascade(&clip, map.as_ref())?;
            }
            let start = Instant::now();
            for _ in 0..a.iters {
                std::hint::black_box(model.forward_cascade(&clip, map.as_ref())?);
            }
            let mean = start.elapsed().as_secs_f64() / a.iters as f64;
            println!(
                "{}: {} params, {}x{}, mean {:.6} s per forward over {} iterations",
                spec.name,
                spec.count_params(),
                a.height,
                a.width,
                mean,
                a.iters
            );
        }
        Command::CountParams(a) => {
            println!("{}", load_spec(&a.spec)?.count_params());
        }
        Command::Layout(a) => {
            let mut spec = match (&a.from, a.mini) {
                (Some(p), _) => load_spec(p)?,
                (None, Some(w)) if w >= 2 => EncoderDecoderLayout::mini(w, true).build(&a.name),
                (None, Some(w)) => bail!("--mini width must be at least 2, got {w}"),
                (None, None) => EncoderDecoderLayout::REFERENCE.build(&a.name),
            };
            spec.name = a.name.clone();
            let spec = if a.no_noise_map {
                spec.without_noise_map(&a.name)
            } else {
                spec
            };
            spec.validate()?;
            spec.save(&a.out)?;
            println!("{}", spec.count_params());
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

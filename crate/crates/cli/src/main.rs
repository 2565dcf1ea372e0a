use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use viewsynth::eval::{EvalReport, ViewMetrics};
use viewsynth::geometry::{build_psv, DepthLevels, GrayMap, Image, Spacing};
use viewsynth::multires::MrConfig;
use viewsynth::network::{ArchConfig, DepthNet, NetManifest};
use viewsynth::pipeline::{synthesize_sample, SynthesisOptions, ViewSynthesis};
use viewsynth::scenegen::{make_sample, random_layered_scene, DatasetSample, SceneSpec};
use viewsynth::trainer::{
    phase_two_from, schedule_defaults, train_phase, PairPolicy, Phase, SampleList, SampleSource, ToyRecipe,
};
use viewsynth::{Error, Result};

#[derive(Parser)]
#[command(name = "viewsynth", version, about = "Plane-sweep view synthesis with learned depth distributions")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Depth levels; defaults to the checkpoint's or the phase's count.
    #[arg(long, global = true)]
    depths: Option<usize>,
    /// Run the depth-resampling second pass.
    #[arg(long, global = true)]
    mr: bool,
    #[arg(long, global = true, default_value_t = 0.01)]
    mr_threshold: f64,
    #[arg(long, global = true, default_value_t = 32)]
    mr_patch: usize,
    /// adjacent, grid or nearest:K
    #[arg(long, global = true, default_value = "nearest:4")]
    pairs: String,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scene description into a dataset directory.
    GenScene {
        /// Scene TOML; omit to draw a random layered toy scene.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the plane-sweep volume of one input view as PNG planes.
    BuildPsv {
        #[arg(long)]
        data: PathBuf,
        /// Input index within the sample.
        #[arg(long, default_value_t = 0)]
        input: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a network and write checkpoint, manifest and loss curve.
    Train(TrainArgs),
    /// Synthesize the target view of a dataset directory.
    Synthesize {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare predicted images with ground truth by file name.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Argmax-depth PNG and per-pixel pdf CSV.
    DumpPdf {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Pixels to dump as `x,y`; repeatable.
        #[arg(long = "pixel")]
        pixels: Vec<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PhaseArg {
    One16,
    Two64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchArg {
    Toy,
    Full,
}

#[derive(Args)]
struct TrainArgs {
    /// Sample directories; omit to train on freshly generated toy scenes.
    #[arg(long)]
    data: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "one16")]
    phase: PhaseArg,
    #[arg(long, value_enum, default_value = "toy")]
    arch: ArchArg,
    /// Phase-one checkpoint whose feature stacks phase two builds on.
    #[arg(long)]
    from: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    views: Option<usize>,
    #[arg(long)]
    patch: Option<usize>,
}

fn exit_code(e: &Error) -> u8 {
    if e.is_config() {
        2
    } else {
        3
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let policy: PairPolicy = g.pairs.parse()?;
    let mr = if g.mr {
        Some(MrConfig::new(g.mr_patch, g.mr_threshold, Spacing::InverseDepth)?)
    } else {
        None
    };
    match cli.command {
        Command::GenScene { spec, out } => gen_scene(spec.as_deref(), &out, g),
        Command::BuildPsv { data, input, out } => build_psv_cmd(&data, input, &out, g),
        Command::Train(args) => train(&args, g, policy),
        Command::Synthesize { data, checkpoint, out } => {
            let (net, sample) = load_pair(&checkpoint, &data, g)?;
            synthesize(&net, &sample, &out, policy, mr)
        }
        Command::Eval { pred, gt, out } => eval(&pred, &gt, &out, g),
        Command::DumpPdf {
            data,
            checkpoint,
            out,
            pixels,
        } => {
            let (net, sample) = load_pair(&checkpoint, &data, g)?;
            dump_pdf(&net, &sample, &out, policy, mr, &pixels)
        }
    }
}

fn gen_scene(spec: Option<&Path>, out: &Path, g: &Global) -> Result<()> {
    let scene = match spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::Missing(path.display().to_string()),
                _ => e.into(),
            })?;
            SceneSpec::from_toml(&text, &path.display().to_string())?
        }
        None => random_layered_scene(&ToyRecipe::default().scene_config(g.depths.unwrap_or(16))?, g.seed),
    };
    let sample = make_sample(&scene)?;
    sample.write(out)?;
    std::fs::write(out.join("scene.toml"), scene.to_toml())?;
    info!("wrote {} views to {}", sample.inputs.len() + 1, out.display());
    Ok(())
}

fn build_psv_cmd(data: &Path, input: usize, out: &Path, g: &Global) -> Result<()> {
    let sample = DatasetSample::read(data)?;
    let view = sample
        .inputs
        .get(input)
        .ok_or_else(|| Error::Config(format!("input {input} out of range ({} inputs)", sample.inputs.len())))?;
    let levels = DepthLevels::new(
        sample.depth_range.0,
        sample.depth_range.1,
        g.depths.unwrap_or(16),
        Spacing::InverseDepth,
    )?;
    let psv = build_psv(&view.image, &view.camera, &sample.target.camera, &levels)?;
    std::fs::create_dir_all(out)?;
    let mut listing = String::from("index,depth,valid_fraction\n");
    for (k, (plane, valid)) in psv.planes().iter().zip(psv.validity()).enumerate() {
        plane.save(&out.join(format!("plane_{k:03}.png")))?;
        let (w, h) = (valid.width(), valid.height());
        let mask = GrayMap::from_vec(w, h, (0..w * h).map(|i| valid.get(i % w, i / w) as u8 as f64).collect())?;
        mask.save_png(&out.join(format!("valid_{k:03}.png")), 0.0, 1.0)?;
        listing.push_str(&format!("{k},{:?},{:?}\n", levels[k], valid.fraction_valid()));
    }
    std::fs::write(out.join("levels.csv"), listing)?;
    info!("wrote {} planes to {}", levels.len(), out.display());
    Ok(())
}

fn train(args: &TrainArgs, g: &Global, policy: PairPolicy) -> Result<()> {
    let recipe = ToyRecipe::default();
    let (one, two) = schedule_defaults();
    let (phase, mut cfg) = match args.phase {
        PhaseArg::One16 => (Phase::One16, one),
        PhaseArg::Two64 => (Phase::Two64, two),
    };
    let depths = g.depths.unwrap_or(phase.depths());
    if matches!(args.arch, ArchArg::Toy) {
        cfg = recipe.train_config(phase);
    }
    cfg.seed = g.seed;
    cfg.pairs = policy;
    if let Some(v) = args.iterations {
        cfg.iterations = v;
    }
    if let Some(v) = args.lr {
        cfg.adam.lr = v;
    }
    if let Some(v) = args.views {
        cfg.unique_views = v;
    }
    if let Some(v) = args.patch {
        cfg.patch = v;
    }
    let arch = match args.arch {
        ArchArg::Toy => ArchConfig::toy(depths)?,
        ArchArg::Full => ArchConfig::full(depths)?,
    };
    let (mut net, parent) = match (&args.from, phase) {
        (Some(path), _) => {
            let parent = DepthNet::load(path)?;
            (phase_two_from(&parent, arch, g.seed)?, Some(path.display().to_string()))
        }
        (None, Phase::Two64) => {
            return Err(Error::Config("phase two needs --from <phase-one checkpoint>".into()));
        }
        (None, Phase::One16) => (DepthNet::new(arch, g.seed)?, None),
    };
    let source: Box<dyn SampleSource> = if args.data.is_empty() {
        Box::new(recipe.stream(depths, g.seed)?)
    } else {
        Box::new(SampleList(
            args.data.iter().map(|d| DatasetSample::read(d)).collect::<Result<_>>()?,
        ))
    };
    std::fs::create_dir_all(&args.out)?;
    let start = Instant::now();
    let every = (cfg.iterations / 20).max(1);
    let report = train_phase(&mut net, source.as_ref(), &cfg, |r, _| {
        if (r.iteration + 1) % every == 0 {
            info!("iteration {} loss x255 {:.3}", r.iteration + 1, r.loss_x255);
        }
    })?;
    net.save(&args.out.join("model.pswt"))?;
    report.write_csv(&args.out.join("loss.csv"))?;
    NetManifest {
        arch: net.arch().clone(),
        phase: format!("{phase:?}"),
        iterations: cfg.iterations,
        seed: g.seed,
        parent,
    }
    .save(&args.out.join("manifest.json"))?;
    info!("trained {} iterations in {:.1}s", cfg.iterations, start.elapsed().as_secs_f64());
    Ok(())
}

fn load_pair(checkpoint: &Path, data: &Path, g: &Global) -> Result<(DepthNet, DatasetSample)> {
    let net = DepthNet::load(checkpoint)?;
    if let Some(d) = g.depths {
        if d != net.depths() {
            return Err(Error::Config(format!(
                "--depths {d} does not match the checkpoint's {} levels",
                net.depths()
            )));
        }
    }
    Ok((net, DatasetSample::read(data)?))
}

fn run_synthesis(
    net: &DepthNet,
    sample: &DatasetSample,
    policy: PairPolicy,
    mr: Option<MrConfig>,
) -> Result<(Vec<(usize, usize)>, ViewSynthesis)> {
    let pairs = viewsynth::trainer::build_pairs(sample, policy)?;
    let opts = SynthesisOptions {
        mr,
        ..SynthesisOptions::default()
    };
    let out = synthesize_sample(net, sample, &pairs, &opts)?;
    Ok((pairs, out))
}

fn synthesize(net: &DepthNet, sample: &DatasetSample, out: &Path, policy: PairPolicy, mr: Option<MrConfig>) -> Result<()> {
    let start = Instant::now();
    let (pairs, view) = run_synthesis(net, sample, policy, mr)?;
    std::fs::create_dir_all(out)?;
    view.image.save(&out.join("final.png"))?;
    for (i, &(a, b)) in pairs.iter().enumerate() {
        view.pair_images[i].save(&out.join(format!("pair_{i}.png")))?;
        view.pair_weights[i].save_png(&out.join(format!("weight_{i}.png")), 0.0, 1.0)?;
        view.pair_confidence[i].save_png(&out.join(format!("confidence_{i}.png")), 0.0, 1.0)?;
        info!("pair {i}: inputs {a} and {b}");
    }
    let (dmin, dmax) = sample.depth_range;
    view.argmax_depth.save_png(&out.join("depth.png"), dmin, dmax)?;
    let mut report = EvalReport {
        views: vec![ViewMetrics::measure(
            &sample.target.id,
            &view.image,
            &sample.target.image,
            pairs.len(),
            mr.is_some(),
            net.depths(),
        )?],
        ..EvalReport::default()
    };
    report.config.insert("pairs".into(), policy.to_string());
    report.config.insert("mr".into(), format!("{mr:?}"));
    report.config.insert("depths".into(), net.depths().to_string());
    report.runtime_secs = start.elapsed().as_secs_f64();
    report.save(&out.join("report.csv"))?;
    info!(
        "L1 x255 {:.3}, SSIM {:.4}",
        report.views[0].l1_x255, report.views[0].ssim
    );
    Ok(())
}

fn eval(pred: &Path, gt: &Path, out: &Path, g: &Global) -> Result<()> {
    let start = Instant::now();
    let mut names: Vec<PathBuf> = std::fs::read_dir(pred)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    names.retain(|p| p.extension().is_some_and(|e| e == "png") && gt.join(p.file_name().unwrap()).exists());
    names.sort();
    if names.is_empty() {
        return Err(Error::Missing(format!(
            "no PNG in {} has a same-named ground truth in {}",
            pred.display(),
            gt.display()
        )));
    }
    let mut report = EvalReport::default();
    for p in names {
        let name = p.file_name().unwrap();
        let a = Image::load(&p)?;
        let b = Image::load(&gt.join(name))?;
        let id = p.file_stem().unwrap().to_string_lossy();
        report
            .views
            .push(ViewMetrics::measure(&id, &a, &b, 0, g.mr, g.depths.unwrap_or(0))?);
    }
    report.config.insert("pred".into(), pred.display().to_string());
    report.config.insert("gt".into(), gt.display().to_string());
    report.runtime_secs = start.elapsed().as_secs_f64();
    report.save(out)?;
    info!(
        "{} views: mean L1 x255 {:.3}, mean SSIM {:.4}",
        report.views.len(),
        report.mean_l1_x255(),
        report.mean_ssim()
    );
    Ok(())
}

fn parse_pixel(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("pixel `{s}` is not `x,y`"));
    let (x, y) = s.split_once(',').ok_or_else(bad)?;
    Ok((x.trim().parse().map_err(|_| bad())?, y.trim().parse().map_err(|_| bad())?))
}

fn dump_pdf(
    net: &DepthNet,
    sample: &DatasetSample,
    out: &Path,
    policy: PairPolicy,
    mr: Option<MrConfig>,
    pixels: &[String],
) -> Result<()> {
    let pixels = pixels.iter().map(|s| parse_pixel(s)).collect::<Result<Vec<_>>>()?;
    let (_, view) = run_synthesis(net, sample, policy, mr)?;
    if let Some(&(x, y)) = pixels.iter().find(|&&(x, y)| x >= view.width() || y >= view.height()) {
        return Err(Error::Config(format!("pixel ({x}, {y}) outside the {}x{} view", view.width(), view.height())));
    }
    std::fs::create_dir_all(out)?;
    let (dmin, dmax) = sample.depth_range;
    view.argmax_depth.save_png(&out.join("argmax_depth.png"), dmin, dmax)?;
    let mut csv = String::from("x,y,level,depth,probability\n");
    for (x, y) in pixels {
        let levels = view.levels_at(x, y);
        for (k, p) in view.pdf_at(x, y).into_iter().enumerate() {
            csv.push_str(&format!("{x},{y},{k},{:?},{:?}\n", levels[k], p));
        }
    }
    std::fs::write(out.join("pdf.csv"), csv)?;
    Ok(())
}

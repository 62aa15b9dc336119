use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::info;

use lodsplat::avatar::{load_avatar, save_avatar};
use lodsplat::bench::{bench, BenchAvatar, BenchOptions};
use lodsplat::drive::{build_camera_rig, generate_dataset, load_dataset, Animation, CameraRig, DEFAULT_RIG_RADIUS};
use lodsplat::image::Image;
use lodsplat::mask::{select_faces, Mask};
use lodsplat::metrics::{psnr, ssim};
use lodsplat::optim::{train_stage, KeyframeViews, TrainConfig, TrainReport};
use lodsplat::raster::render;
use lodsplat::{ply, AvatarHierarchy, Mesh};

#[derive(Parser)]
#[command(name = "lodsplat", version, about = "Drivable level-of-detail Gaussian-splat avatars")]
struct Cli {
    /// Seed for every random choice made by the pipeline.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a multi-view keyframe dataset from a textured mesh.
    Prepare(PrepareArgs),
    /// Create a level-0 avatar from a mesh, or subdivide an optimized one.
    Embed(EmbedArgs),
    /// Optimize the Gaussians of one level against a dataset.
    Train(TrainArgs),
    /// Refine the faces inside an image mask to a higher level.
    Enhance(EnhanceArgs),
    /// Pose an avatar on every keyframe of an animation.
    Drive(DriveArgs),
    /// Render an avatar from rig cameras.
    Render(RenderArgs),
    /// Compare images (or avatar renders against a dataset).
    Metrics(MetricsArgs),
    /// Measure render cost along an orbit.
    Bench(BenchArgs),
    /// Write world-space Gaussians as a PLY.
    Export(ExportArgs),
}

#[derive(Args)]
struct PrepareArgs {
    /// Textured rest mesh (OBJ with mtllib/map_Kd).
    #[arg(long)]
    mesh: PathBuf,
    /// Animation directory (per-keyframe OBJs + manifest.json); a procedural
    /// motion is used when omitted.
    #[arg(long)]
    anim: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Number of keyframes sampled evenly from the animation.
    #[arg(long, default_value_t = 40)]
    keyframes: usize,
    /// Frames of the procedural motion.
    #[arg(long, default_value_t = 120)]
    anim_frames: usize,
    #[arg(long, default_value_t = 42)]
    cameras: usize,
    /// Image width and height in pixels.
    #[arg(long, default_value_t = 1080)]
    size: usize,
    #[arg(long, default_value_t = DEFAULT_RIG_RADIUS)]
    radius: f64,
}

#[derive(Args)]
struct EmbedArgs {
    /// Rest mesh for a new level-0 avatar.
    #[arg(long, conflicts_with_all = ["subdivide", "avatar"])]
    mesh: Option<PathBuf>,
    /// Subdivide every root face of `--avatar` by one level.
    #[arg(long, requires = "avatar")]
    subdivide: bool,
    #[arg(long)]
    avatar: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainSettings {
    #[arg(long, default_value_t = 3000)]
    iterations: usize,
    /// Record a CSV log row every this many iterations.
    #[arg(long, default_value_t = 100)]
    log_every: usize,
    /// Camera ids held out of training (comma separated).
    #[arg(long, value_delimiter = ',')]
    holdout: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    avatar: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    stage: u32,
    #[command(flatten)]
    settings: TrainSettings,
    /// CSV training log.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Output avatar directory (defaults to updating `--avatar` in place).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EnhanceArgs {
    #[arg(long)]
    avatar: PathBuf,
    /// Grayscale PNG; pixels >= 128 mark the region to enhance.
    #[arg(long)]
    mask: PathBuf,
    /// Rig camera id the mask was drawn in.
    #[arg(long)]
    camera: String,
    #[arg(long)]
    target_level: u32,
    /// Rig file; defaults to `<data>/cameras.json`.
    #[arg(long)]
    rig: Option<PathBuf>,
    /// Dataset used to train each new level; without it new Gaussians keep
    /// their initial values.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Keyframe mesh the mask was drawn on (defaults to the rest mesh).
    #[arg(long)]
    keyframe: Option<PathBuf>,
    #[command(flatten)]
    settings: TrainSettings,
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DriveArgs {
    #[arg(long)]
    avatar: PathBuf,
    #[arg(long)]
    anim: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also render every keyframe from this rig camera.
    #[arg(long, requires = "rig")]
    camera: Option<String>,
    #[arg(long)]
    rig: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    avatar: PathBuf,
    #[arg(long)]
    rig: PathBuf,
    /// Camera ids (comma separated); all rig cameras when omitted.
    #[arg(long, value_delimiter = ',')]
    camera: Vec<String>,
    /// Keyframe mesh to pose on (defaults to the rest mesh).
    #[arg(long)]
    keyframe: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    /// Rendered image.
    #[arg(long, requires = "b", conflicts_with = "avatar")]
    a: Option<PathBuf>,
    /// Reference image.
    #[arg(long)]
    b: Option<PathBuf>,
    /// Evaluate an avatar against dataset views instead of two images.
    #[arg(long, requires = "data")]
    avatar: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Restrict dataset evaluation to these cameras (comma separated).
    #[arg(long, value_delimiter = ',')]
    camera: Vec<String>,
    /// CSV output with one row per compared pair.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Avatar directories (repeatable).
    #[arg(long, required = true)]
    avatar: Vec<PathBuf>,
    /// Animation used in dynamic mode (rest mesh re-posed when omitted).
    #[arg(long)]
    anim: Option<PathBuf>,
    #[arg(long, default_value_t = 300)]
    frames: usize,
    #[arg(long, default_value_t = 512)]
    size: usize,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=3))]
    multiplicity: u8,
    /// Modes to measure: static, dynamic or both.
    #[arg(long, value_delimiter = ',', default_value = "static,dynamic")]
    modes: Vec<String>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    avatar: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Keyframe mesh to pose on (defaults to the rest mesh).
    #[arg(long)]
    keyframe: Option<PathBuf>,
    /// Write 64-bit floats instead of the 32-bit viewer layout.
    #[arg(long)]
    double: bool,
}

fn evenly_spaced(count: usize, total: usize) -> Vec<usize> {
    let count = count.min(total);
    (0..count).map(|i| i * total / count.max(1)).collect()
}

fn train_config(settings: &TrainSettings, seed: u64) -> TrainConfig {
    TrainConfig {
        iterations: settings.iterations,
        log_every: settings.log_every,
        seed,
        ..Default::default()
    }
}

fn load_training_views(data: &Path, holdout: &[String]) -> anyhow::Result<Vec<KeyframeViews>> {
    let exclude: Vec<&str> = holdout.iter().map(String::as_str).collect();
    Ok(load_dataset(data, &exclude)
        .with_context(|| format!("loading dataset {}", data.display()))?
        .keyframes)
}

fn write_log(log: Option<&PathBuf>, reports: &[TrainReport]) -> anyhow::Result<()> {
    let Some(path) = log else { return Ok(()) };
    let mut csv = String::from("level,iteration,loss,psnr\n");
    for r in reports {
        for row in &r.log {
            csv.push_str(&format!("{},{},{:.9},{:.6}\n", r.level, row.iteration, row.loss, row.probe_psnr));
        }
    }
    fs::write(path, csv).with_context(|| format!("writing {}", path.display()))
}

fn keyframe_or_rest(h: &AvatarHierarchy, keyframe: Option<&PathBuf>) -> anyhow::Result<Mesh> {
    match keyframe {
        Some(path) => {
            let mesh = Mesh::load_obj(path)?;
            Ok(h.mesh.with_positions(mesh.vertices)?)
        }
        None => Ok((*h.mesh).clone()),
    }
}

fn prepare(args: PrepareArgs) -> anyhow::Result<()> {
    let rest = Mesh::load_obj(&args.mesh)?;
    if !rest.has_texture() {
        bail!(lodsplat::Error::MissingTexture);
    }
    let anim = match &args.anim {
        Some(dir) => Animation::load_dir(dir, &rest)?,
        None => Animation::procedural(&rest, args.anim_frames, 30.0),
    };
    let rig = build_camera_rig(args.radius, args.cameras, args.size, args.size)?;
    let frames = evenly_spaced(args.keyframes, anim.len());
    let manifest = generate_dataset(&rest, &anim, &rig, &frames, &args.out)?;
    println!("wrote {} images for {} keyframes to {}", manifest.views.len(), frames.len(), args.out.display());
    Ok(())
}

fn embed(args: EmbedArgs) -> anyhow::Result<()> {
    let h = if args.subdivide {
        let mut h = load_avatar(args.avatar.as_ref().expect("required by clap"))?;
        h.subdivide_all()?;
        h
    } else {
        let Some(mesh) = &args.mesh else { bail!("either --mesh or --subdivide --avatar is required") };
        AvatarHierarchy::initialize_level0(Mesh::load_obj(mesh)?)?
    };
    save_avatar(&h, &args.out)?;
    println!("{} gaussians, level {} -> {}", h.len(), h.current_level(), args.out.display());
    Ok(())
}

fn train(args: TrainArgs, seed: u64) -> anyhow::Result<()> {
    let mut h = load_avatar(&args.avatar)?;
    let views = load_training_views(&args.data, &args.settings.holdout)?;
    let report = train_stage(&mut h, &views, args.stage, &train_config(&args.settings, seed))?;
    if let Some((head, tail)) = report.head_tail_means() {
        println!("level {}: {} gaussians trained, loss {head:.5} -> {tail:.5}", args.stage, report.trained_gaussians);
    }
    if let Some(path) = &args.log {
        report.write_csv(path)?;
    }
    save_avatar(&h, args.out.as_ref().unwrap_or(&args.avatar))?;
    Ok(())
}

fn enhance(args: EnhanceArgs, seed: u64) -> anyhow::Result<()> {
    let mut h = load_avatar(&args.avatar)?;
    let rig_path = match (&args.rig, &args.data) {
        (Some(r), _) => r.clone(),
        (None, Some(d)) => d.join("cameras.json"),
        (None, None) => bail!("--rig or --data is required to find camera {}", args.camera),
    };
    let rig = CameraRig::load(&rig_path)?;
    let cam = rig
        .get(&args.camera)
        .with_context(|| format!("camera {} not in {}", args.camera, rig_path.display()))?
        .clone();
    let mask = Mask::load(&args.mask, cam)?;
    let keyframe = keyframe_or_rest(&h, args.keyframe.as_ref())?;
    let faces: Vec<usize> = select_faces(&h.mesh, &keyframe, &mask)?
        .into_iter()
        .filter(|&f| h.root_level(f).is_some_and(|l| l < args.target_level))
        .collect();
    let before = h.len();
    let mut reports = Vec::new();
    match &args.data {
        Some(data) => {
            let views = load_training_views(data, &args.settings.holdout)?;
            let cfg = train_config(&args.settings, seed);
            h.enhance_with(&faces, args.target_level, |h, level| {
                reports.push(train_stage(h, &views, level, &cfg)?);
                Ok(())
            })?;
        }
        None => h.enhance(&faces, args.target_level)?,
    }
    write_log(args.log.as_ref(), &reports)?;
    save_avatar(&h, args.out.as_ref().unwrap_or(&args.avatar))?;
    println!("{} faces selected, {} -> {} gaussians", faces.len(), before, h.len());
    Ok(())
}

fn drive(args: DriveArgs) -> anyhow::Result<()> {
    let h = load_avatar(&args.avatar)?;
    let anim = Animation::load_dir(&args.anim, &h.mesh)?;
    let cam = match (&args.camera, &args.rig) {
        (Some(id), Some(rig)) => {
            let rig = CameraRig::load(rig)?;
            Some(rig.get(id).with_context(|| format!("camera {id} not in rig"))?.clone())
        }
        _ => None,
    };
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    for i in 0..anim.len() {
        let world = h.pose(&anim.keyframe_mesh(&h.mesh, i)?)?;
        ply::export_ply(&world, args.out.join(format!("frame{i:04}.ply")))?;
        if let Some(cam) = &cam {
            render(&world, cam, &Default::default()).save_png(args.out.join(format!("frame{i:04}_{}.png", cam.id)))?;
        }
    }
    println!("posed {} keyframes into {}", anim.len(), args.out.display());
    Ok(())
}

fn render_cmd(args: RenderArgs) -> anyhow::Result<()> {
    let h = load_avatar(&args.avatar)?;
    let rig = CameraRig::load(&args.rig)?;
    let world = h.pose(&keyframe_or_rest(&h, args.keyframe.as_ref())?)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let cams: Vec<_> = if args.camera.is_empty() {
        rig.views.iter().collect()
    } else {
        args.camera
            .iter()
            .map(|id| rig.get(id).with_context(|| format!("camera {id} not in rig")))
            .collect::<anyhow::Result<_>>()?
    };
    for cam in cams {
        render(&world, cam, &Default::default()).save_png(args.out.join(format!("{}.png", cam.id)))?;
    }
    Ok(())
}

fn metrics(args: MetricsArgs) -> anyhow::Result<()> {
    let mut rows: Vec<(String, f64, f64)> = Vec::new();
    if let (Some(a), Some(b)) = (&args.a, &args.b) {
        let (ia, ib) = (Image::load_png(a)?, Image::load_png(b)?);
        rows.push((a.display().to_string(), psnr(&ia, &ib)?, ssim(&ia, &ib)?));
    } else if let (Some(avatar), Some(data)) = (&args.avatar, &args.data) {
        let h = load_avatar(avatar)?;
        let data = load_dataset(data, &[])?;
        for (k, kf) in data.keyframes.iter().enumerate() {
            let world = h.pose(&kf.mesh)?;
            for v in &kf.views {
                if !args.camera.is_empty() && !args.camera.contains(&v.id) {
                    continue;
                }
                let img = render(&world, v, &Default::default());
                let target = v.target.as_ref().expect("dataset views carry targets");
                rows.push((format!("kf{k:04}_{}", v.id), psnr(&img, target)?, ssim(&img, target)?));
            }
        }
    } else {
        bail!("pass --a and --b, or --avatar and --data");
    }
    if rows.is_empty() {
        bail!(lodsplat::Error::EmptyDataset);
    }
    let n = rows.len() as f64;
    let mean_psnr = rows.iter().map(|r| r.1).sum::<f64>() / n;
    let mean_ssim = rows.iter().map(|r| r.2).sum::<f64>() / n;
    println!("PSNR: {mean_psnr:.4}");
    println!("SSIM: {mean_ssim:.6}");
    println!("LPIPS: not supported");
    if let Some(path) = &args.csv {
        let mut csv = String::from("view,psnr,ssim,lpips\n");
        for (name, p, s) in &rows {
            csv.push_str(&format!("{name},{p:.6},{s:.8},\n"));
        }
        fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn bench_cmd(args: BenchArgs) -> anyhow::Result<()> {
    let modes = args
        .modes
        .iter()
        .map(|m| match m.as_str() {
            "static" => Ok(false),
            "dynamic" => Ok(true),
            other => bail!("unknown mode {other:?} (expected static or dynamic)"),
        })
        .collect::<anyhow::Result<Vec<bool>>>()?;
    let mut avatars = Vec::new();
    for dir in &args.avatar {
        let h = Arc::new(load_avatar(dir)?);
        let keyframes = match &args.anim {
            Some(anim) => {
                let anim = Animation::load_dir(anim, &h.mesh)?;
                (0..anim.len()).map(|i| anim.keyframe_mesh(&h.mesh, i).map(Arc::new)).collect::<lodsplat::Result<_>>()?
            }
            None => Vec::new(),
        };
        avatars.push(BenchAvatar { id: dir.display().to_string(), hierarchy: h, keyframes });
    }
    let opts = BenchOptions {
        frames: args.frames,
        width: args.size,
        height: args.size,
        ..Default::default()
    };
    let report = bench(&avatars, &modes, args.multiplicity as usize, &opts)?;
    print!("{}", report.to_csv());
    if let Some(path) = &args.csv {
        report.write_csv(path)?;
    }
    if let Some(path) = &args.json {
        report.write_json(path)?;
    }
    Ok(())
}

fn export(args: ExportArgs) -> anyhow::Result<()> {
    let h = load_avatar(&args.avatar)?;
    let world = h.pose(&keyframe_or_rest(&h, args.keyframe.as_ref())?)?;
    let precision = if args.double { ply::Precision::Double } else { ply::Precision::Float };
    ply::export_ply_with(&world, &args.out, precision)?;
    println!("{} gaussians -> {}", world.len(), args.out.display());
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let threads = lodsplat::configure_threads();
    info!("using {threads} worker threads");
    match cli.command {
        Command::Prepare(a) => prepare(a),
        Command::Embed(a) => embed(a),
        Command::Train(a) => train(a, cli.seed),
        Command::Enhance(a) => enhance(a, cli.seed),
        Command::Drive(a) => drive(a),
        Command::Render(a) => render_cmd(a),
        Command::Metrics(a) => metrics(a),
        Command::Bench(a) => bench_cmd(a),
        Command::Export(a) => export(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let kind = err
                .chain()
                .find_map(|e| e.downcast_ref::<lodsplat::Error>())
                .map_or("other", lodsplat::Error::kind);
            eprintln!("error[{kind}]: {err}");
            for cause in err.chain().skip(1) {
                eprintln!("  caused by: {cause}");
            }
            ExitCode::FAILURE
        }
    }
}

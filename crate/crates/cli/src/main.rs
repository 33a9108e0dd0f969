mod stage;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use viseme_core::animation::{bake_mesh_sequence, bone_animation, read_bone_assets, resample_curve};
use viseme_core::eval::{keypoint_error, lip_distance_curves, total_variation, write_metric};
use viseme_core::fit::observation::{parse_landmarks, resolve_landmarks, LANDMARK_FILE};
use viseme_core::fit::{fit_curve, read_poses, write_poses, DirectoryObservations, FitConfig};
use viseme_core::obj::write_obj_string;
use viseme_core::procedural::{generate_procedural, ProceduralRules};
use viseme_core::rig::{load_rig_manifest, Rig, DEFAULT_VISEME_LABELS};
use viseme_core::synth::{SynthOptions, SyntheticClip};
use viseme_core::timeline::{read_alignment, PhonemeVisemeMap};
use viseme_core::{read_curve, write_curve, Curve, Error, LandmarkId};

use stage::Stage;

#[derive(Parser, Debug)]
#[command(name = "viseme", version, about = "Viseme curves from phoneme alignments and video observations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Procedural viseme curve from a phoneme alignment.
    GenProc(GenProcArgs),
    /// Fit viseme curves and head poses to observations.
    Fit(FitArgs),
    /// Blend one OBJ per frame.
    Bake(BakeArgs),
    /// Per-frame bone transforms from bone pose assets.
    Bones(BonesArgs),
    /// Resample a curve to another frame rate.
    Resample(ResampleArgs),
    /// Keypoint error, lip distances and curve variation.
    Eval(EvalArgs),
    /// Write a seeded synthetic clip with ground truth.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct ShapeArgs {
    /// Phoneme to viseme map (`phoneme=LABEL` lines); built-in map if absent.
    #[arg(long)]
    map: Option<PathBuf>,
    /// Envelope timing rules; built-in defaults if absent.
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
}

#[derive(Args, Debug)]
struct GenProcArgs {
    #[arg(long)]
    align: PathBuf,
    /// Rig manifest supplying the viseme labels; default labels if absent.
    #[arg(long)]
    rig: Option<PathBuf>,
    #[command(flatten)]
    shape: ShapeArgs,
    /// Output curve CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    rig: PathBuf,
    /// Alignment per clip; pairs up with `--obs` in order.
    #[arg(long, required = true)]
    align: Vec<PathBuf>,
    /// Observation directory per clip.
    #[arg(long, required = true)]
    obs: Vec<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    shape: ShapeArgs,
    /// Output directory. With several clips each gets a subdirectory named
    /// after its alignment file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args, Debug)]
struct BakeArgs {
    #[arg(long)]
    rig: PathBuf,
    #[arg(long)]
    curve: PathBuf,
    /// Output directory for `frame_<j>.obj`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BonesArgs {
    #[arg(long)]
    assets: PathBuf,
    #[arg(long)]
    curve: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ResampleArgs {
    #[arg(long)]
    curve: PathBuf,
    /// Target frame rate.
    #[arg(long)]
    fps: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    rig: PathBuf,
    #[arg(long)]
    curve: PathBuf,
    /// Pose CSV; required for keypoint error.
    #[arg(long)]
    poses: Option<PathBuf>,
    /// Observation directory holding the landmark CSV.
    #[arg(long)]
    obs: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    frames: usize,
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
    /// Landmark noise standard deviation, pixels.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Write landmarks only (no images or flow).
    #[arg(long)]
    landmarks_only: bool,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type CmdResult = Result<usize, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let start = Instant::now();
    let name = match &cli.command {
        Command::GenProc(_) => "gen-proc",
        Command::Fit(_) => "fit",
        Command::Bake(_) => "bake",
        Command::Bones(_) => "bones",
        Command::Resample(_) => "resample",
        Command::Eval(_) => "eval",
        Command::Synth(_) => "synth",
    };
    let result = match cli.command {
        Command::GenProc(a) => gen_proc(a),
        Command::Fit(a) => fit(a),
        Command::Bake(a) => bake(a),
        Command::Bones(a) => bones(a),
        Command::Resample(a) => resample(a),
        Command::Eval(a) => eval(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(frames) => {
            println!("OK {name} frames={frames} ms={}", start.elapsed().as_millis());
            ExitCode::SUCCESS
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}

fn require(path: &Path) -> Result<(), Error> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "not found")))
    }
}

fn default_labels() -> Vec<String> {
    DEFAULT_VISEME_LABELS.iter().map(|s| s.to_string()).collect()
}

fn load_shape(shape: &ShapeArgs, labels: &[String]) -> Result<(PhonemeVisemeMap, ProceduralRules), Error> {
    let map = match &shape.map {
        Some(p) => PhonemeVisemeMap::read(p, labels)?,
        None => PhonemeVisemeMap::default_for(labels),
    };
    let rules = match &shape.rules {
        Some(p) => ProceduralRules::read(p)?,
        None => ProceduralRules::default(),
    };
    Ok((map, rules))
}

fn load_config(path: Option<&Path>) -> Result<FitConfig, Error> {
    match path {
        Some(p) => FitConfig::read(p),
        None => Ok(FitConfig::default()),
    }
}

fn gen_proc(a: GenProcArgs) -> CmdResult {
    require(&a.align)?;
    let labels = match &a.rig {
        Some(r) => load_rig_manifest(r)?.labels,
        None => default_labels(),
    };
    let (map, rules) = load_shape(&a.shape, &labels)?;
    let timeline = read_alignment(&a.align)?;
    let curve = generate_procedural(&timeline, a.shape.fps, &map, &rules)?;
    let mut stage = Stage::new();
    stage.write(&a.out, write_curve(&curve).as_bytes())?;
    stage.commit()?;
    Ok(curve.len())
}

struct ClipJob {
    align: PathBuf,
    obs: PathBuf,
    out: PathBuf,
}

struct ClipOutput {
    curve: Curve,
    poses: String,
    missing_flow: usize,
}

fn fit(a: FitArgs) -> CmdResult {
    if a.align.len() != a.obs.len() {
        return Err(Failure::Usage(format!(
            "{} --align but {} --obs; they pair up per clip",
            a.align.len(),
            a.obs.len()
        )));
    }
    if a.workers == 0 {
        return Err(Failure::Usage("--workers must be at least 1".into()));
    }
    require(&a.rig)?;
    for p in a.align.iter().chain(&a.obs) {
        require(p)?;
    }
    if let Some(c) = &a.config {
        require(c)?;
    }
    let rig = load_rig_manifest(&a.rig)?;
    let cfg = load_config(a.config.as_deref())?;
    cfg.validate()?;
    let (map, rules) = load_shape(&a.shape, &rig.labels)?;

    let jobs: Vec<ClipJob> = if a.align.len() == 1 {
        vec![ClipJob {
            align: a.align[0].clone(),
            obs: a.obs[0].clone(),
            out: a.out.clone(),
        }]
    } else {
        let mut seen = BTreeSet::new();
        let mut jobs = Vec::new();
        for (align, obs) in a.align.iter().zip(&a.obs) {
            let stem = align
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            if !seen.insert(stem.clone()) {
                return Err(Failure::Usage(format!("two clips share the alignment name `{stem}`")));
            }
            jobs.push(ClipJob {
                align: align.clone(),
                obs: obs.clone(),
                out: a.out.join(stem),
            });
        }
        jobs
    };

    let run = |job: &ClipJob| -> Result<ClipOutput, Error> {
        let timeline = read_alignment(&job.align)?;
        let procedural = generate_procedural(&timeline, a.shape.fps, &map, &rules)?;
        let obs = DirectoryObservations::open(&job.obs, &rig, &cfg)?;
        let result = fit_curve(&rig, &procedural, &obs, &cfg)?;
        Ok(ClipOutput {
            curve: result.curve,
            poses: write_poses(&result.poses),
            missing_flow: obs.missing_flow_frames().len(),
        })
    };

    let workers = a.workers.min(jobs.len());
    let mut outputs: Vec<Option<Result<ClipOutput, Error>>> = (0..jobs.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let jobs = &jobs;
                let run = &run;
                s.spawn(move || {
                    (w..jobs.len())
                        .step_by(workers)
                        .map(|i| (i, run(&jobs[i])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("fit worker panicked") {
                outputs[i] = Some(r);
            }
        }
    });

    let mut stage = Stage::new();
    let mut frames = 0;
    let mut missing = 0;
    for (job, out) in jobs.iter().zip(outputs) {
        let out = out.expect("every clip was scheduled")?;
        frames += out.curve.len();
        missing += out.missing_flow;
        stage.write(&job.out.join("curve.csv"), write_curve(&out.curve).as_bytes())?;
        stage.write(&job.out.join("poses.csv"), out.poses.as_bytes())?;
    }
    if missing > 0 {
        eprintln!("warning: flow missing for {missing} frame(s); the flow term is skipped there");
    }
    stage.commit()?;
    Ok(frames)
}

fn bake(a: BakeArgs) -> CmdResult {
    require(&a.rig)?;
    require(&a.curve)?;
    let rig = load_rig_manifest(&a.rig)?;
    let curve = read_curve(&a.curve)?;
    check_labels(&rig, &curve)?;
    let meshes = bake_mesh_sequence(&rig, &curve)?;
    let mut stage = Stage::new();
    for (j, mesh) in meshes.iter().enumerate() {
        stage.write(&a.out.join(format!("frame_{j:05}.obj")), write_obj_string(mesh).as_bytes())?;
    }
    stage.commit()?;
    Ok(meshes.len())
}

fn check_labels(rig: &Rig, curve: &Curve) -> Result<(), Error> {
    if rig.labels != curve.labels {
        return Err(Error::Config(format!(
            "curve labels {:?} differ from rig labels {:?}",
            curve.labels, rig.labels
        )));
    }
    Ok(())
}

fn bones(a: BonesArgs) -> CmdResult {
    require(&a.assets)?;
    require(&a.curve)?;
    let curve = read_curve(&a.curve)?;
    let assets = read_bone_assets(&a.assets, &curve.labels)?;
    let text = bone_animation(&assets, &curve)?;
    let mut stage = Stage::new();
    stage.write(&a.out, text.as_bytes())?;
    stage.commit()?;
    Ok(curve.len())
}

fn resample(a: ResampleArgs) -> CmdResult {
    require(&a.curve)?;
    let curve = read_curve(&a.curve)?;
    let out = resample_curve(&curve, a.fps)?;
    let mut stage = Stage::new();
    stage.write(&a.out, write_curve(&out).as_bytes())?;
    stage.commit()?;
    Ok(out.len())
}

fn eval(a: EvalArgs) -> CmdResult {
    require(&a.rig)?;
    require(&a.curve)?;
    let rig = load_rig_manifest(&a.rig)?;
    let curve = read_curve(&a.curve)?;
    check_labels(&rig, &curve)?;
    let cfg = load_config(a.config.as_deref())?;
    let mut stage = Stage::new();

    match (&a.poses, &a.obs) {
        (Some(poses), Some(obs)) => {
            require(poses)?;
            let lm_path = obs.join(LANDMARK_FILE);
            require(&lm_path)?;
            let poses = read_poses(poses, cfg.intrinsics)?;
            let text = std::fs::read_to_string(&lm_path).map_err(|e| Error::io(&lm_path, e))?;
            let rows = parse_landmarks(&lm_path.display().to_string(), &text)?;
            let mut observed = resolve_landmarks(&rows, &rig, &cfg);
            observed.resize(curve.len().max(observed.len()), Vec::new());
            let subset: Vec<LandmarkId> = if rig.mouth_landmarks.is_empty() {
                rig.landmark_bindings.iter().map(|(id, _)| *id).collect()
            } else {
                rig.mouth_landmarks.clone()
            };
            let err = keypoint_error(&rig, &curve, &poses, &observed, &subset)?;
            eprintln!("mean keypoint error {:.4} px", err.mean());
            stage.write(&a.out.join("keypoint_error.csv"), write_metric(&err).as_bytes())?;
        }
        (None, None) => {}
        _ => return Err(Failure::Usage("--poses and --obs come together".into())),
    }
    if rig.lip_pairs.is_some() {
        let (h, v) = lip_distance_curves(&rig, &curve)?;
        stage.write(&a.out.join("lip_horizontal.csv"), write_metric(&h).as_bytes())?;
        stage.write(&a.out.join("lip_vertical.csv"), write_metric(&v).as_bytes())?;
    }
    let tv = total_variation(&curve);
    let mut text = String::from("viseme,total_variation\n");
    for (label, v) in curve.labels.iter().zip(&tv) {
        text.push_str(&format!("{label},{v:.6}\n"));
    }
    stage.write(&a.out.join("total_variation.csv"), text.as_bytes())?;
    stage.commit()?;
    Ok(curve.len())
}

fn synth(a: SynthArgs) -> CmdResult {
    let clip = SyntheticClip::generate(SynthOptions {
        seed: a.seed,
        frames: a.frames,
        fps: a.fps,
        landmark_noise: a.noise,
        landmarks_only: a.landmarks_only,
        ..Default::default()
    })?;
    let mut stage = Stage::new();
    for (rel, bytes) in clip.files()? {
        stage.write(&a.out.join(rel), &bytes)?;
    }
    stage.commit()?;
    Ok(clip.frames())
}

//! The `micro <group> <verb> [flags]` command line.
//!
//! ```text
//! scene gen     --frames N --points N --size WxH --out DIR
//! noise inject  --in DIR (--sigma S | --walk-limit L) --out DIR
//! vo run        --seq DIR --detector fast|slipd [--slipd-model FILE] [--dynamic]
//!               [--sigma S | --walk-limit L] --out traj.csv
//! vo eval       --est traj.csv --gt poses.txt --metric mse|mee
//! vo sweep      --scene DIR|bundled (--sigmas LIST | --walk-limits LIST) --seeds N --out CSV
//! slipd train   --scene DIR|bundled --block N --k 8 --lambda F --steps N --out model.txt
//! net macs      --alpha F --classes N [--json FILE]
//! net infer     --alpha F --weights FILE --image FILE
//! loco collect  --steps N --out CSV
//! loco filter   --in CSV --k N --out CSV
//! loco fig4     --data CSV --sizes LIST --models 25 --out CSV
//! loco mbrl     --iters N --filter-k N --out DIR
//! ```
//!
//! `--seed` and `--jobs` are accepted everywhere. Every command that writes
//! files also writes `run.json` (resolved arguments, seed, timestamp) next to
//! its output; commands that only print do so when given `--out`. Exit codes:
//! 0 success, 1 usage error, 2 runtime error.

use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::features::{
    slipd_loss, slipd_train, Detector, FastConfig, SlipdModel, SlipdTrainConfig,
};
use crate::imaging::{add_gaussian_noise, load_pgm, GreyImage};
use crate::locomotion::{
    collect_episodes, collect_rollout, evaluate_policy, fig4_sweep, kmeans_filter, mbrl_iteration, random_policy,
    write_fig4_csv, Fig4Config, Fig4Row, MbrlConfig, MpcConfig, TrainConfig, TransitionDataset,
};
use crate::micronet::{build_microbotnet, count_macs, forward, load_weights, softmax, MacConvention};
use crate::odometry::{
    noise_sweep, ratio_table, run_vo, trajectory_error, write_sweep_csv, CameraIntrinsics, Metric, NoiseSpec,
    RatioRow, SweepConfig, Trajectory, VoConfig,
};
use crate::scenes::{
    bundled_scene, export_frames, export_kitti, generate_scene, load_kitti, mine_pairs, parse_poses, PathSpec, Scene,
    SceneSpec, Segment,
};
use crate::{derive_seed, seeded_rng};

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation; exit code 1.
    Usage(String),
    /// The command failed; exit code 2.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

fn rt(e: impl Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Parser, Debug, Serialize)]
#[command(name = "micro", version, about = "Noise-robust VO, MAC accounting and MBRL experiments")]
pub struct Cli {
    /// Master seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for sweeps. Output does not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub group: Group,
}

#[derive(Subcommand, Debug, Serialize)]
pub enum Group {
    /// Synthetic scenes.
    Scene {
        #[command(subcommand)]
        verb: SceneVerb,
    },
    /// Sensor noise injection.
    Noise {
        #[command(subcommand)]
        verb: NoiseVerb,
    },
    /// Visual odometry.
    Vo {
        #[command(subcommand)]
        verb: VoVerb,
    },
    /// Sparse linear interest point detector.
    Slipd {
        #[command(subcommand)]
        verb: SlipdVerb,
    },
    /// MicroBotNet accounting and inference.
    Net {
        #[command(subcommand)]
        verb: NetVerb,
    },
    /// Model-based RL on simulated attitude dynamics.
    Loco {
        #[command(subcommand)]
        verb: LocoVerb,
    },
}

#[derive(Subcommand, Debug, Serialize)]
pub enum SceneVerb {
    /// Render a scene on the reference path and export it in KITTI layout.
    Gen(SceneGen),
}

#[derive(Args, Debug, Serialize)]
pub struct SceneGen {
    #[arg(long, default_value_t = 100)]
    pub frames: usize,
    #[arg(long, default_value_t = 20_000)]
    pub points: usize,
    /// Image size, `WxH`.
    #[arg(long, default_value = "512x384", value_parser = parse_size)]
    pub size: (usize, usize),
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug, Serialize)]
pub enum NoiseVerb {
    /// Add Gaussian noise to every frame of a sequence.
    Inject(NoiseInject),
}

#[derive(Args, Debug, Serialize, Clone, Copy)]
#[group(multiple = false)]
pub struct NoiseArgs {
    /// Static noise standard deviation, grey levels.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Random walk on the standard deviation, bounded by this limit.
    #[arg(long)]
    pub walk_limit: Option<f64>,
}

impl NoiseArgs {
    fn spec(&self) -> NoiseSpec {
        match (self.sigma, self.walk_limit) {
            (Some(sigma), _) => NoiseSpec::Static { sigma },
            (_, Some(limit)) => NoiseSpec::Walk { limit },
            _ => NoiseSpec::None,
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct NoiseInject {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug, Serialize)]
pub enum VoVerb {
    /// Estimate a trajectory.
    Run(VoRun),
    /// Score a trajectory against ground truth.
    Eval(VoEval),
    /// Fixed vs dynamic threshold over noise levels and seeds.
    Sweep(VoSweep),
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Fast,
    Slipd,
}

#[derive(Args, Debug, Serialize)]
pub struct DetectorArgs {
    #[arg(long, value_enum, default_value_t = DetectorKind::Fast)]
    pub detector: DetectorKind,
    /// Model manifest, required with `--detector slipd`.
    #[arg(long)]
    pub slipd_model: Option<PathBuf>,
    /// Initial (or fixed) detector threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
}

impl DetectorArgs {
    fn build(&self) -> Result<Detector, CliError> {
        let mut det = match self.detector {
            DetectorKind::Fast => Detector::Fast(FastConfig::default()),
            DetectorKind::Slipd => {
                let path = self
                    .slipd_model
                    .as_ref()
                    .ok_or_else(|| CliError::Usage("--detector slipd needs --slipd-model FILE".into()))?;
                Detector::Slipd(SlipdModel::load(path).map_err(rt)?)
            }
        };
        if let Some(t) = self.threshold {
            match &mut det {
                Detector::Fast(c) => c.threshold = t,
                Detector::Slipd(m) => m.score_threshold = t,
            }
        }
        Ok(det)
    }
}

#[derive(Args, Debug, Serialize)]
pub struct VoRun {
    /// KITTI-layout sequence directory, or `bundled`.
    #[arg(long)]
    pub seq: String,
    #[command(flatten)]
    pub detector: DetectorArgs,
    /// Regulate the threshold frame to frame.
    #[arg(long)]
    pub dynamic: bool,
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricArg {
    Mse,
    Mee,
}

#[derive(Args, Debug, Serialize)]
pub struct VoEval {
    /// Trajectory CSV.
    #[arg(long)]
    pub est: PathBuf,
    /// KITTI poses file, or a trajectory CSV.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, value_enum, default_value_t = MetricArg::Mee)]
    pub metric: MetricArg,
    /// Also write the score here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
#[group(id = "levels", required = true, multiple = false, args = ["sigmas", "walk_limits"])]
pub struct VoSweep {
    /// KITTI-layout sequence directory, or `bundled`.
    #[arg(long)]
    pub scene: String,
    /// Static noise levels, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sigmas: Option<Vec<f64>>,
    /// Random-walk limits, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub walk_limits: Option<Vec<f64>>,
    #[arg(long, default_value_t = 10)]
    pub seeds: usize,
    #[command(flatten)]
    pub detector: DetectorArgs,
    /// Per-run errors.
    #[arg(long)]
    pub out: PathBuf,
    /// Fixed/dynamic error ratios per noise level (fig5 for static noise,
    /// fig6 for random walks).
    #[arg(long)]
    pub ratios: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Serialize)]
pub enum SlipdVerb {
    /// Train on correspondences mined from a synthetic scene.
    Train(SlipdTrain),
}

#[derive(Args, Debug, Serialize)]
pub struct SlipdTrain {
    /// Scene exported by `scene gen`, or `bundled`.
    #[arg(long)]
    pub scene: String,
    #[arg(long, default_value_t = 5)]
    pub block: usize,
    /// Non-zero weights kept at export.
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    /// L1 weight.
    #[arg(long, default_value_t = 1e-3)]
    pub lambda: f64,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 20_000)]
    pub pairs: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug, Serialize)]
pub enum NetVerb {
    /// Per-layer MAC and parameter ledger.
    Macs(NetMacs),
    /// Classify one image.
    Infer(NetInfer),
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ConventionArg {
    Thop,
    Multiplies,
}

#[derive(Args, Debug, Serialize)]
pub struct NetMacs {
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, value_enum, default_value_t = ConventionArg::Thop)]
    pub convention: ConventionArg,
    /// Print a text table instead of JSON.
    #[arg(long)]
    pub table: bool,
    /// Also write the JSON report here.
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct NetInfer {
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    /// Weight manifest written by `save_weights`.
    #[arg(long)]
    pub weights: PathBuf,
    /// 32x32 PGM; the grey channel is replicated to RGB.
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Serialize)]
pub enum LocoVerb {
    /// Random-policy transitions.
    Collect(LocoCollect),
    /// k-means dataset filter.
    Filter(LocoFilter),
    /// Validation error of filtered, random and full training sets.
    Fig4(LocoFig4),
    /// Train / plan / collect / filter iterations.
    Mbrl(LocoMbrl),
}

#[derive(Args, Debug, Serialize)]
pub struct LocoCollect {
    #[arg(long, default_value_t = 4000)]
    pub steps: usize,
    /// Restart every N steps even without a crash.
    #[arg(long)]
    pub episode: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct LocoFilter {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct LocoFig4 {
    /// Training pool CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Validation CSV; by default 800 fresh random-policy transitions.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 25)]
    pub models: usize,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    pub epochs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct LocoMbrl {
    #[arg(long, default_value_t = 5)]
    pub iters: usize,
    #[arg(long, default_value_t = 500)]
    pub filter_k: usize,
    /// Random-policy steps in the initial dataset.
    #[arg(long, default_value_t = 500)]
    pub initial: usize,
    #[arg(long, default_value_t = 500)]
    pub rollout: usize,
    #[arg(long, default_value_t = MpcConfig::default().samples)]
    pub samples: usize,
    #[arg(long, default_value_t = MpcConfig::default().horizon)]
    pub horizon: usize,
    #[arg(long, default_value_t = 10)]
    pub episodes: usize,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let w: usize = w.trim().parse().map_err(|e| format!("width: {e}"))?;
    let h: usize = h.trim().parse().map_err(|e| format!("height: {e}"))?;
    if w == 0 || h == 0 {
        return Err("size must be non-zero".into());
    }
    Ok((w, h))
}

/// Which figure schema to write.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FigureKind {
    /// `size,condition,mean_val_mse,std_val_mse,models`
    Fig4,
    /// `noise,ratio_mse,ratio_mee,n_seeds` over static noise levels.
    Fig5,
    /// Same columns over random-walk limits.
    Fig6,
    /// `frame,x,y,z`
    Traj,
}

pub enum FigureData<'a> {
    Fig4(&'a [Fig4Row]),
    Ratios(&'a [RatioRow]),
    Trajectory(&'a Trajectory),
}

#[derive(Serialize)]
struct RatioOut {
    noise: f64,
    ratio_mse: f64,
    ratio_mee: f64,
    n_seeds: usize,
}

/// Writes plotting data with a leading `# seed=<n>` comment line.
pub fn emit_figure_data(data: &FigureData, kind: FigureKind, seed: u64, path: &Path) -> Result<(), CliError> {
    let mut buf = format!("# seed={seed}\n").into_bytes();
    match (kind, data) {
        (FigureKind::Fig4, FigureData::Fig4(rows)) => write_fig4_csv(rows, &mut buf).map_err(rt)?,
        (FigureKind::Fig5 | FigureKind::Fig6, FigureData::Ratios(rows)) => {
            if let Some(r) = rows.iter().find(|r| r.detector != rows[0].detector) {
                return Err(rt(format!(
                    "ratio table mixes detectors {} and {}; the schema has no detector column",
                    rows[0].detector, r.detector
                )));
            }
            let mut w = csv::Writer::from_writer(&mut buf);
            for r in rows.iter() {
                w.serialize(RatioOut {
                    noise: r.noise,
                    ratio_mse: r.ratio_mse,
                    ratio_mee: r.ratio_mee,
                    n_seeds: r.n_seeds,
                })
                .map_err(rt)?;
            }
            w.flush().map_err(rt)?;
        }
        (FigureKind::Traj, FigureData::Trajectory(t)) => t.write_csv(&mut buf).map_err(rt)?,
        (kind, _) => return Err(rt(format!("results do not match the {kind:?} schema"))),
    }
    write_file(path, &buf)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| rt(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| rt(format!("{}: {e}", path.display())))
}

fn csv_with_seed(seed: u64, body: impl FnOnce(&mut Vec<u8>) -> Result<(), csv::Error>) -> Result<Vec<u8>, CliError> {
    let mut buf = format!("# seed={seed}\n").into_bytes();
    body(&mut buf).map_err(rt)?;
    Ok(buf)
}

#[derive(Serialize)]
struct RunRecord<'a> {
    argv: &'a [String],
    seed: u64,
    jobs: usize,
    config: &'a Cli,
    version: &'static str,
    timestamp_unix: u64,
}

// run.json goes in `out` when it is a directory, else beside it.
fn write_run_json(cli: &Cli, argv: &[String], out: &Path, out_is_dir: bool) -> Result<(), CliError> {
    let dir = if out_is_dir {
        out.to_path_buf()
    } else {
        out.parent().map(Path::to_path_buf).unwrap_or_default()
    };
    let record = RunRecord {
        argv,
        seed: cli.seed,
        jobs: cli.jobs,
        config: cli,
        version: env!("CARGO_PKG_VERSION"),
        timestamp_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    let json = serde_json::to_string_pretty(&record).map_err(rt)?;
    write_file(&dir.join("run.json"), (json + "\n").as_bytes())
}

/// Parses `argv` (program name first) and runs it, printing to the process
/// streams. Returns the exit code.
pub fn run(argv: &[String]) -> i32 {
    let out = std::io::stdout();
    let err = std::io::stderr();
    run_with(argv, &mut out.lock(), &mut err.lock())
}

/// [`run`] with explicit output streams.
pub fn run_with(argv: &[String], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    0
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    1
                }
            };
        }
    };
    match execute(&cli, argv, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "{e}");
            if let CliError::Usage(_) = e {
                let _ = writeln!(err, "run `micro --help` for the grammar");
            }
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli, argv: &[String], out: &mut dyn Write) -> Result<(), CliError> {
    if cli.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let print = |out: &mut dyn Write, s: &str| match writeln!(out, "{s}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(rt(e)),
        _ => Ok(()),
    };
    match &cli.group {
        Group::Scene {
            verb: SceneVerb::Gen(a),
        } => {
            let spec = scene_spec(a)?;
            let scene = generate_scene(&spec, &mut seeded_rng(cli.seed)).map_err(rt)?;
            export_kitti(&scene, &a.out).map_err(rt)?;
            write_run_json(cli, argv, &a.out, true)?;
            print(
                out,
                &format!(
                    "wrote {} frames ({}x{}, {} points) to {}",
                    scene.frames.len(),
                    spec.width,
                    spec.height,
                    spec.n_points,
                    a.out.display()
                ),
            )
        }
        Group::Noise {
            verb: NoiseVerb::Inject(a),
        } => {
            let noise = a.noise.spec();
            if noise == NoiseSpec::None {
                return Err(CliError::Usage("give --sigma S or --walk-limit L".into()));
            }
            let seq = load_kitti(&a.input).map_err(rt)?;
            let frames = seq.load_frames().map_err(rt)?;
            let noisy = inject(&frames, noise, cli.seed)?;
            export_frames(&noisy, &seq.poses, &seq.intrinsics, &a.out).map_err(rt)?;
            write_run_json(cli, argv, &a.out, true)?;
            print(out, &format!("wrote {} noisy frames to {}", noisy.len(), a.out.display()))
        }
        Group::Vo { verb: VoVerb::Run(a) } => {
            let det = a.detector.build()?;
            let (name, frames, gt, k) = load_sequence(&a.seq)?;
            let cfg = VoConfig {
                detector: det,
                dynamic: a.dynamic,
                noise: a.noise.spec(),
                seed: cli.seed,
                ..Default::default()
            };
            let rep = run_vo(&frames, &gt, &k, &cfg).map_err(rt)?;
            emit_figure_data(&FigureData::Trajectory(&rep.trajectory), FigureKind::Traj, cli.seed, &a.out)?;
            write_run_json(cli, argv, &a.out, false)?;
            let summary = serde_json::json!({
                "sequence": name,
                "frames": frames.len(),
                "mse": trajectory_error(&rep.trajectory, &gt, Metric::Mse).map_err(rt)?,
                "mee": trajectory_error(&rep.trajectory, &gt, Metric::Mee).map_err(rt)?,
                "path_length": gt.path_length(),
                "degenerate_frames": rep.degenerate_frames,
            });
            print(out, &summary.to_string())
        }
        Group::Vo { verb: VoVerb::Eval(a) } => {
            let est = Trajectory::load_csv(&a.est).map_err(rt)?;
            let gt = load_gt(&a.gt)?;
            let metric = match a.metric {
                MetricArg::Mse => Metric::Mse,
                MetricArg::Mee => Metric::Mee,
            };
            let v = trajectory_error(&est, &gt, metric).map_err(rt)?;
            let line = serde_json::json!({ "metric": format!("{:?}", a.metric).to_lowercase(), "value": v }).to_string();
            if let Some(p) = &a.out {
                write_file(p, (line.clone() + "\n").as_bytes())?;
                write_run_json(cli, argv, p, false)?;
            }
            print(out, &line)
        }
        Group::Vo { verb: VoVerb::Sweep(a) } => {
            let (levels, kind) = match (&a.sigmas, &a.walk_limits) {
                (Some(s), _) => (s.iter().map(|&sigma| NoiseSpec::Static { sigma }).collect(), FigureKind::Fig5),
                (_, Some(w)) => (s_walk(w), FigureKind::Fig6),
                _ => return Err(CliError::Usage("give --sigmas or --walk-limits".into())),
            };
            let det = a.detector.build()?;
            let (name, frames, gt, k) = load_sequence(&a.scene)?;
            let cfg = SweepConfig {
                sequence: name,
                detectors: vec![det],
                noise: levels,
                seeds: a.seeds,
                master_seed: cli.seed,
                jobs: cli.jobs,
                base: VoConfig::default(),
            };
            let rows = noise_sweep(&frames, &gt, &k, &cfg).map_err(rt)?;
            let buf = csv_with_seed(cli.seed, |b| write_sweep_csv(&rows, b))?;
            write_file(&a.out, &buf)?;
            let ratios = ratio_table(&rows);
            if let Some(p) = &a.ratios {
                emit_figure_data(&FigureData::Ratios(&ratios), kind, cli.seed, p)?;
            }
            write_run_json(cli, argv, &a.out, false)?;
            for r in &ratios {
                print(
                    out,
                    &format!(
                        "{} noise {}: fixed/dynamic mse {:.3} mee {:.3} ({} seeds)",
                        r.detector, r.noise, r.ratio_mse, r.ratio_mee, r.n_seeds
                    ),
                )?;
            }
            Ok(())
        }
        Group::Slipd {
            verb: SlipdVerb::Train(a),
        } => {
            let (frames, observations) = if a.scene == "bundled" {
                let s = bundled_scene().map_err(rt)?;
                (s.frames, s.observations)
            } else {
                let seq = load_kitti(&a.scene).map_err(rt)?;
                let frames = seq.load_frames().map_err(rt)?;
                let (w, h) = frames.first().map(|f| (f.width(), f.height())).unwrap_or((0, 0));
                let obs = seq.observations(SceneSpec::default().near, w, h).ok_or_else(|| {
                    rt(format!(
                        "{}: no points.txt; training needs a scene written by `scene gen`",
                        a.scene
                    ))
                })?;
                (frames, obs)
            };
            let pairs = mine_pairs(&observations, &frames, a.block, a.pairs, &mut seeded_rng(derive_seed(cli.seed, &[1])))
                .map_err(rt)?;
            let defaults = SlipdModel {
                block: a.block,
                weights: vec![0.0; a.block * a.block],
                lambda: a.lambda,
                target_k: a.k,
                ..Default::default()
            };
            let tc = SlipdTrainConfig {
                learning_rate: a.lr,
                steps: a.steps,
                ..Default::default()
            };
            let (model, rep) = slipd_train(&pairs, &defaults, &tc, &mut seeded_rng(derive_seed(cli.seed, &[2])))
                .map_err(rt)?;
            model.save(&a.out).map_err(rt)?;
            write_run_json(cli, argv, &a.out, false)?;
            let moments = slipd_loss(&model, &pairs).map_err(rt)?;
            let summary = serde_json::json!({
                "pairs": pairs.len(),
                "initial_loss": rep.initial_loss,
                "final_loss": rep.final_loss,
                "nonzeros": model.nonzeros(),
                "norm": model.norm(),
                "score_mean": moments.mean,
                "score_variance": moments.variance,
            });
            print(out, &summary.to_string())
        }
        Group::Net {
            verb: NetVerb::Macs(a),
        } => {
            let spec = build_microbotnet(a.alpha, a.classes).map_err(|e| CliError::Usage(e.to_string()))?;
            let conv = match a.convention {
                ConventionArg::Thop => MacConvention::Thop,
                ConventionArg::Multiplies => MacConvention::Multiplies,
            };
            let report = count_macs(&spec, conv);
            let json = report.to_json();
            for p in a.json.iter().chain(&a.out) {
                write_file(p, (json.clone() + "\n").as_bytes())?;
                write_run_json(cli, argv, p, false)?;
            }
            print(out, if a.table { report.to_table() } else { json }.trim_end())
        }
        Group::Net {
            verb: NetVerb::Infer(a),
        } => {
            let spec = build_microbotnet(a.alpha, a.classes).map_err(|e| CliError::Usage(e.to_string()))?;
            let weights = load_weights(&spec, &a.weights).map_err(rt)?;
            let img = load_pgm(&a.image).map_err(rt)?;
            let shape = spec.input_shape();
            if (img.width(), img.height()) != (shape.w, shape.h) {
                return Err(rt(format!(
                    "{}: expected a {}x{} image, got {}x{}",
                    a.image.display(),
                    shape.w,
                    shape.h,
                    img.width(),
                    img.height()
                )));
            }
            let grey: Vec<f32> = img.pixels().iter().map(|&v| v as f32 / 255.0).collect();
            let input: Vec<f32> = (0..shape.c).flat_map(|_| grey.iter().copied()).collect();
            let logits = forward(&spec, &weights, &input).map_err(rt)?;
            let probs = softmax(&logits);
            let class = probs
                .iter()
                .enumerate()
                .fold(0, |best, (i, &p)| if p > probs[best] { i } else { best });
            let line = serde_json::json!({ "class": class, "logits": logits, "probabilities": probs }).to_string();
            if let Some(p) = &a.out {
                write_file(p, (line.clone() + "\n").as_bytes())?;
                write_run_json(cli, argv, p, false)?;
            }
            print(out, &line)
        }
        Group::Loco {
            verb: LocoVerb::Collect(a),
        } => {
            let mut rng = seeded_rng(derive_seed(cli.seed, &[1]));
            let d = match a.episode {
                Some(cap) => collect_episodes(random_policy, a.steps, cap, &mut rng),
                None => collect_rollout(random_policy, a.steps, &mut rng),
            }
            .map_err(usage_or_rt)?;
            let buf = csv_with_seed(cli.seed, |b| d.write_csv(b))?;
            write_file(&a.out, &buf)?;
            write_run_json(cli, argv, &a.out, false)?;
            print(out, &format!("wrote {} transitions to {}", d.len(), a.out.display()))
        }
        Group::Loco {
            verb: LocoVerb::Filter(a),
        } => {
            let d = TransitionDataset::load_csv(&a.input).map_err(rt)?;
            if a.k == 0 || a.k > d.len() {
                return Err(CliError::Usage(format!("--k must be in 1..={}, got {}", d.len(), a.k)));
            }
            let (f, _, km) = kmeans_filter(&d, a.k, &mut seeded_rng(derive_seed(cli.seed, &[1]))).map_err(rt)?;
            let buf = csv_with_seed(cli.seed, |b| f.write_csv(b))?;
            write_file(&a.out, &buf)?;
            write_run_json(cli, argv, &a.out, false)?;
            let summary = serde_json::json!({
                "before": d.len(),
                "after": f.len(),
                "lloyd_iterations": km.iterations,
                "objective": km.objective,
            });
            print(out, &summary.to_string())
        }
        Group::Loco {
            verb: LocoVerb::Fig4(a),
        } => {
            let pool = TransitionDataset::load_csv(&a.data).map_err(rt)?;
            let val = match &a.val {
                Some(p) => TransitionDataset::load_csv(p).map_err(rt)?,
                None => collect_rollout(random_policy, 800, &mut seeded_rng(derive_seed(cli.seed, &[2]))).map_err(rt)?,
            };
            let cfg = Fig4Config {
                sizes: a.sizes.clone(),
                models: a.models,
                train: TrainConfig {
                    epochs: a.epochs,
                    ..Default::default()
                },
                master_seed: cli.seed,
                jobs: cli.jobs,
            };
            let rows = fig4_sweep(&pool, &val, &cfg).map_err(usage_or_rt)?;
            emit_figure_data(&FigureData::Fig4(&rows), FigureKind::Fig4, cli.seed, &a.out)?;
            write_run_json(cli, argv, &a.out, false)?;
            for r in &rows {
                print(
                    out,
                    &format!(
                        "size {:>5} {:<6} val mse {:.5} ± {:.5}",
                        r.size, r.condition, r.mean_val_mse, r.std_val_mse
                    ),
                )?;
            }
            Ok(())
        }
        Group::Loco {
            verb: LocoVerb::Mbrl(a),
        } => mbrl(cli, argv, a, out),
    }
}

fn usage_or_rt(e: crate::locomotion::LocoError) -> CliError {
    match e {
        crate::locomotion::LocoError::Argument(m) => CliError::Usage(m),
        other => rt(other),
    }
}

fn s_walk(limits: &[f64]) -> Vec<NoiseSpec> {
    limits.iter().map(|&limit| NoiseSpec::Walk { limit }).collect()
}

fn scene_spec(a: &SceneGen) -> Result<SceneSpec, CliError> {
    if a.frames < 2 {
        return Err(CliError::Usage("--frames must be at least 2".into()));
    }
    let (w, h) = a.size;
    let scale = w as f64 / 512.0;
    let k = CameraIntrinsics::new(300.0 * scale, 300.0 * scale, (w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let spec = SceneSpec {
        n_points: a.points,
        width: w,
        height: h,
        intrinsics: k,
        path: bundled_path(a.frames),
        ..SceneSpec::bundled()
    };
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(spec)
}

/// The reference path cut to `frames` frames, or extended straight past its end.
fn bundled_path(frames: usize) -> PathSpec {
    let mut left = frames - 1;
    let mut segments = Vec::new();
    for s in SceneSpec::bundled().path.segments {
        let n = s.frames.min(left);
        if n > 0 {
            segments.push(Segment { frames: n, ..s });
        }
        left -= n;
    }
    if left > 0 {
        segments.push(Segment {
            frames: left,
            step: 0.5,
            yaw_rate: 0.0,
        });
    }
    PathSpec { segments }
}

/// Per-frame noise, using the same streams as a VO run with the same seed.
fn inject(frames: &[GreyImage], noise: NoiseSpec, seed: u64) -> Result<Vec<GreyImage>, CliError> {
    let sigmas = noise.sigmas(frames.len(), seed).map_err(|e| CliError::Usage(e.to_string()))?;
    frames
        .iter()
        .zip(sigmas)
        .enumerate()
        .map(|(i, (f, s))| add_gaussian_noise(f, s, &mut seeded_rng(derive_seed(seed, &[1, i as u64]))).map_err(rt))
        .collect()
}

type Sequence = (String, Vec<GreyImage>, Trajectory, CameraIntrinsics);

fn load_sequence(arg: &str) -> Result<Sequence, CliError> {
    if arg == "bundled" {
        let Scene {
            frames, gt, intrinsics, ..
        } = bundled_scene().map_err(rt)?;
        return Ok(("bundled".into(), frames, gt, intrinsics));
    }
    let seq = load_kitti(arg).map_err(rt)?;
    let frames = seq.load_frames().map_err(rt)?;
    let name = Path::new(arg)
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| arg.to_string());
    Ok((name, frames, seq.trajectory(), seq.intrinsics))
}

fn load_gt(path: &Path) -> Result<Trajectory, CliError> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        return Trajectory::load_csv(path).map_err(rt);
    }
    let text = std::fs::read_to_string(path).map_err(|e| rt(format!("{}: {e}", path.display())))?;
    Ok(Trajectory::from_poses(&parse_poses(path, &text).map_err(rt)?))
}

#[derive(Serialize)]
struct MbrlRow {
    iteration: usize,
    val_mse: f64,
    mean_episode_reward: f64,
    size_before_filter: usize,
    size_after_filter: usize,
    reduction_ratio: f64,
    lloyd_iterations: usize,
    objective_first: f64,
    objective_last: f64,
}

fn mbrl(cli: &Cli, argv: &[String], a: &LocoMbrl, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = MbrlConfig {
        rollout_steps: a.rollout,
        mpc: MpcConfig {
            samples: a.samples,
            horizon: a.horizon,
            ..Default::default()
        },
        eval_episodes: a.episodes,
        seed: cli.seed,
        ..Default::default()
    };
    cfg.mpc.validate().map_err(usage_or_rt)?;
    let (mut data, val) = crate::locomotion::fig4_data(a.initial, 800, derive_seed(cli.seed, &[7])).map_err(usage_or_rt)?;
    let mut rows = Vec::new();
    for i in 0..a.iters {
        let (next, _, m) = mbrl_iteration(&data, &val, a.filter_k, i, &cfg).map_err(usage_or_rt)?;
        writeln!(
            out,
            "iteration {i}: val mse {:.4}, MPC episode reward {:.3}, dataset {} -> {}",
            m.val_mse, m.mean_episode_reward, m.size_before_filter, m.size_after_filter
        )
        .map_err(rt)?;
        rows.push(MbrlRow {
            iteration: i,
            val_mse: m.val_mse,
            mean_episode_reward: m.mean_episode_reward,
            size_before_filter: m.size_before_filter,
            size_after_filter: m.size_after_filter,
            reduction_ratio: m.reduction_ratio,
            lloyd_iterations: m.kmeans_objective.len(),
            objective_first: m.kmeans_objective.first().copied().unwrap_or(f64::NAN),
            objective_last: m.kmeans_objective.last().copied().unwrap_or(f64::NAN),
        });
        data = next;
    }
    let baseline = evaluate_policy(
        random_policy,
        a.episodes,
        cfg.episode_length,
        &mut seeded_rng(derive_seed(cli.seed, &[8])),
    );
    let metrics = csv_with_seed(cli.seed, |b| {
        let mut w = csv::Writer::from_writer(b);
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    })?;
    write_file(&a.out.join("metrics.csv"), &metrics)?;
    let ds = csv_with_seed(cli.seed, |b| data.write_csv(b))?;
    write_file(&a.out.join("dataset.csv"), &ds)?;
    let base = serde_json::json!({ "random_policy_mean_reward": baseline.mean_reward, "episodes": a.episodes });
    write_file(&a.out.join("baseline.json"), (base.to_string() + "\n").as_bytes())?;
    write_run_json(cli, argv, &a.out, true)?;
    writeln!(out, "random policy episode reward {:.3}", baseline.mean_reward).map_err(rt)
}

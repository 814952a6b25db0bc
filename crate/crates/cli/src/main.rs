use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use motionstitch::config::PipelineConfig;
use motionstitch::io::MetricRecord;
use motionstitch::pipeline::{self, EvalFiles};
use motionstitch::synth::{MotionKind, SceneSpec};
use motionstitch::Error;

/// Reconstructs one continuous world-frame human motion from a multi-shot video.
#[derive(Debug, Parser)]
#[command(name = "motionstitch", version)]
struct Cli {
    /// Config file (key = value); defaults to $MOTIONSTITCH_CONFIG.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set ransac.iterations=800.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic multi-shot bundle with ground truth.
    Synth(SynthArgs),
    /// Split the observation stream into shots.
    Detect {
        #[arg(long)]
        observations: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the relative camera pose across every cut.
    Calibrate {
        #[arg(long)]
        observations: PathBuf,
        #[arg(long)]
        transitions: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recover per-shot camera trajectories from point tracks.
    Ba {
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long)]
        observations: PathBuf,
        #[arg(long)]
        transitions: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bring every shot into the first shot's frame.
    Stitch {
        /// Per-shot pose files, in shot order.
        #[arg(long = "shot", required = true)]
        shots: Vec<PathBuf>,
        #[arg(long)]
        calibration: PathBuf,
        #[arg(long)]
        cameras: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        out_cameras: Option<PathBuf>,
    },
    /// Detect foot contacts and remove foot sliding.
    Refine {
        #[arg(long)]
        pose: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        contacts_out: PathBuf,
    },
    /// Score a predicted motion against ground truth.
    Eval(EvalArgs),
    /// Run every stage on a bundle directory.
    Run {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Name recorded in the metrics report; defaults to the bundle directory name.
        #[arg(long)]
        video: Option<String>,
    },
    /// Print the effective configuration.
    Config,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    shots: usize,
    #[arg(long, default_value_t = 300)]
    frames: usize,
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
    #[arg(long, default_value = "walk_circle")]
    motion: String,
    #[arg(long, default_value_t = 4)]
    cameras: usize,
    #[arg(long, default_value_t = 1200)]
    points: usize,
    /// Keypoint noise in pixels.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0.0)]
    outliers: f64,
    #[arg(long, default_value_t = 0.0)]
    bbox_jitter: f64,
    #[arg(long, default_value_t = 30)]
    min_shot_len: usize,
    #[arg(long, default_value = "bundle")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    contacts: Option<PathBuf>,
    #[arg(long)]
    pred_cameras: Option<PathBuf>,
    #[arg(long)]
    truth_cameras: Option<PathBuf>,
    #[arg(long)]
    transitions: Option<PathBuf>,
    #[arg(long, default_value = "video")]
    video: String,
    #[arg(long)]
    out: PathBuf,
}

fn report(records: &[MetricRecord]) {
    for r in records {
        eprintln!("{:<18} {:>12.5} {}", r.metric, r.value, r.unit);
    }
}

fn execute(cli: Cli) -> Result<(), Error> {
    let cfg = PipelineConfig::load(cli.config.as_deref(), &cli.overrides)?;
    match cli.command {
        Command::Synth(a) => {
            let spec = SceneSpec {
                seed: a.seed,
                duration_frames: a.frames,
                fps: a.fps,
                motion_kind: a.motion.parse::<MotionKind>()?,
                camera_count: a.cameras,
                shot_count: a.shots,
                static_point_count: a.points,
                keypoint_noise_px: a.noise,
                outlier_fraction: a.outliers,
                bbox_jitter: a.bbox_jitter,
                min_shot_len: a.min_shot_len,
            };
            let files = pipeline::cmd_synth(&spec, &a.out)?;
            eprintln!("wrote {} files to {}", files.len(), a.out.display());
        }
        Command::Detect { observations, out } => {
            let seg = pipeline::cmd_detect(&observations, &out, &cfg)?;
            eprintln!("{} shots, transitions {:?}", seg.shot_count(), seg.transitions);
        }
        Command::Calibrate { observations, transitions, out } => {
            let rels = pipeline::cmd_calibrate(&observations, &transitions, &out, &cfg)?;
            for (t, r) in &rels {
                eprintln!("cut {t}: {} inliers", r.inlier_count);
            }
        }
        Command::Ba {
            tracks,
            observations,
            transitions,
            out,
        } => {
            let cams = pipeline::cmd_ba(&tracks, &observations, &transitions, &out, &cfg)?;
            eprintln!("solved {} cameras", cams.len());
        }
        Command::Stitch {
            shots,
            calibration,
            cameras,
            out,
            out_cameras,
        } => {
            let m = pipeline::cmd_stitch(&shots, &calibration, &cameras, &out, out_cameras.as_deref(), &cfg)?;
            eprintln!("stitched {} frames from {} shots", m.states.len(), shots.len());
        }
        Command::Refine { pose, out, contacts_out } => {
            let c = pipeline::cmd_refine(&pose, &out, &contacts_out, &cfg)?;
            let planted = (0..c.len()).filter(|&f| c.left[f] || c.right[f]).count();
            eprintln!("{planted} of {} frames with a planted foot", c.len());
        }
        Command::Eval(a) => {
            let files = EvalFiles {
                contacts: a.contacts,
                predicted_cameras: a.pred_cameras,
                truth_cameras: a.truth_cameras,
                transitions: a.transitions,
            };
            report(&pipeline::cmd_eval(&a.pred, &a.truth, &files, &a.video, &a.out, &cfg)?);
        }
        Command::Run { bundle, out, video } => {
            let name = video.unwrap_or_else(|| bundle.file_name().map_or_else(|| "video".into(), |n| n.to_string_lossy().into_owned()));
            match pipeline::cmd_run(&bundle, &out, &name, &cfg)? {
                Some(records) => report(&records),
                None => eprintln!("no ground truth in {}; wrote stage outputs only", bundle.display()),
            }
        }
        Command::Config => print!("{cfg}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! Stage chaining, both in memory and over bundle directories.
//!
//! A bundle directory holds the inputs of one video:
//!
//! ```text
//! observations.jsonl       per-frame boxes, keypoints and scene scores
//! tracks.jsonl             2D point tracks
//! shot_<k>.pose.jsonl      per-shot motion, each in its shot's own frame
//! truth/                   optional ground truth: pose, cameras, transitions, contacts
//! ```

use std::path::{Path, PathBuf};

use crate::align::{canonical_camera_rotation, AlignError, concatenate_naive, stitch as stitch_shots, BodyState, ShotMotion, StitchedMotion};
use crate::ba::{slice_tracks, solve_sequence, PointTrack};
use crate::config::PipelineConfig;
use crate::epipolar::{ransac_relative_pose, CorrespondenceSet, RansacConfig, RelativePose};
use crate::error::Error;
use crate::geom::{exp_so3, log_so3, nearest_rotation, CameraPose, RotationMatrix};
use crate::io::{self, MetricRecord};
use crate::metrics::{self, MetricsReport, MotionPair};
use crate::shotdet::{detect_shots, evaluate_detector, DetectionScore, FrameObservation, ShotSegmentation};
use crate::synth::{generate, GroundTruthBundle, SceneSpec};
use crate::traj::{detect_contacts, refine_trajectory, skeleton_sequence, ContactState};

pub const OBSERVATIONS_FILE: &str = "observations.jsonl";
pub const TRACKS_FILE: &str = "tracks.jsonl";
pub const TRUTH_DIR: &str = "truth";
pub const POSE_FILE: &str = "pose.jsonl";
pub const CAMERAS_FILE: &str = "cameras.jsonl";
pub const TRANSITIONS_FILE: &str = "transitions.jsonl";
pub const CONTACTS_FILE: &str = "contacts.jsonl";
pub const CALIBRATION_FILE: &str = "calibration.jsonl";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const WORLD_CAMERAS_FILE: &str = "world_cameras.jsonl";

pub fn shot_pose_file(k: usize) -> String {
    format!("shot_{k}.pose.jsonl")
}

pub fn detect(observations: &[FrameObservation], cfg: &PipelineConfig) -> Result<ShotSegmentation, Error> {
    Ok(detect_shots(observations, &cfg.detector)?)
}

/// Joints kept by the acceleration filter even when more exceed it.
const MIN_SMOOTH_JOINTS: usize = 12;

/// Whether the cut between `tail` and `head` has the two frames per side
/// that motion compensation needs.
pub fn can_compensate(tail: (usize, usize), head: (usize, usize)) -> bool {
    head.0 >= tail.0 + 2 && head.0 + 1 < head.1
}

/// Keypoint pairs across the cut at `head.0`. With `compensate`, each side is
/// extrapolated linearly by half a frame to the instant between the two
/// frames, so body motion across the cut does not leak into the estimate;
/// joints whose image acceleration exceeds `max_accel_px` on either side are
/// then dropped, keeping at least the smoothest dozen.
pub fn cut_correspondences(observations: &[FrameObservation], tail: (usize, usize), head: (usize, usize), compensate: bool, max_accel_px: f64) -> CorrespondenceSet {
    let t = head.0;
    let at = |f: usize, j: usize| {
        let k = &observations[f].keypoints.joints[j];
        k.visible.then(|| k.position())
    };
    let joints = observations[t].keypoints.joints.len().min(observations[t - 1].keypoints.joints.len());
    if !(compensate && can_compensate(tail, head)) {
        let (s1, s2) = (0..joints).filter_map(|j| at(t - 1, j).zip(at(t, j))).unzip();
        return CorrespondenceSet::all_visible(s1, s2).expect("equal lengths");
    }
    let with_accel = t >= tail.0 + 3 && t + 2 < head.1;
    let mut pairs = Vec::new();
    for j in 0..joints {
        if let (Some(a2), Some(a1), Some(b0), Some(b1)) = (at(t - 2, j), at(t - 1, j), at(t, j), at(t + 1, j)) {
            let accel = if with_accel {
                match (at(t - 3, j), at(t + 2, j)) {
                    (Some(a3), Some(b2)) => (a1 - a2 * 2.0 + a3).norm().max((b0 - b1 * 2.0 + b2).norm()),
                    _ => f64::INFINITY,
                }
            } else {
                0.0
            };
            pairs.push((accel, a1 * 1.5 - a2 * 0.5, b0 * 1.5 - b1 * 0.5));
        }
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| pairs[a].0.total_cmp(&pairs[b].0).then(a.cmp(&b)));
    let keep: Vec<usize> = {
        let mut k: Vec<usize> = order.iter().enumerate().filter(|&(rank, &i)| rank < MIN_SMOOTH_JOINTS || pairs[i].0 <= max_accel_px).map(|(_, &i)| i).collect();
        k.sort_unstable();
        k
    };
    let (s1, s2) = keep.iter().map(|&i| (pairs[i].1, pairs[i].2)).unzip();
    CorrespondenceSet::all_visible(s1, s2).expect("equal lengths")
}

/// Relative camera pose across every transition. With motion compensation
/// the estimate relates the two cameras half a frame either side of the cut;
/// [`stitch`] moves it back onto the frames themselves.
pub fn calibrate(observations: &[FrameObservation], seg: &ShotSegmentation, cfg: &PipelineConfig) -> Result<Vec<(usize, RelativePose)>, Error> {
    let ranges = seg.shot_ranges();
    ranges
        .windows(2)
        .map(|w| {
            let t = w[1].0;
            let c = cut_correspondences(observations, w[0], w[1], cfg.compensate_motion, cfg.max_accel_px);
            let rcfg = RansacConfig {
                seed: cfg.seed.wrapping_add(t as u64),
                ..cfg.ransac
            };
            ransac_relative_pose(&c, &cfg.intrinsics, &rcfg)
                .map(|p| (t, p))
                .map_err(|e| Error::UnderConstrained(format!("cut at frame {t} (frames {}..{}): {e}", t - 1, t + 1)))
        })
        .collect()
}

/// Half of the rotation from camera `a` to camera `b`.
fn half_step(a: &CameraPose, b: &CameraPose) -> nalgebra::Matrix3<f64> {
    exp_so3(&(log_so3(&(b.r.0 * a.r.0.transpose())) * 0.5))
}

/// Moves a relative pose estimated between the half-frame instants around a
/// cut onto the tail's last and the head's first camera.
pub fn retime_to_cut(rel: &RelativePose, tail: &ShotMotion, head: &ShotMotion) -> RelativePose {
    let (n, m) = (tail.cameras.len(), head.cameras.len());
    if n < 2 || m < 2 {
        return rel.clone();
    }
    let into_tail = half_step(&tail.cameras[n - 2], &tail.cameras[n - 1]);
    let into_head = half_step(&head.cameras[0], &head.cameras[1]);
    RelativePose {
        r_delta: RotationMatrix(nearest_rotation(&(into_head * rel.r_delta.0 * into_tail))),
        ..rel.clone()
    }
}

fn masks(observations: &[FrameObservation]) -> Vec<Option<crate::shotdet::BBox>> {
    observations.iter().map(|o| o.mask_bbox.or(Some(o.bbox))).collect()
}

/// Per-frame cameras, each in its shot's frame (first camera level at the
/// origin, looking along +Z).
pub fn solve_cameras(tracks: &[PointTrack], observations: &[FrameObservation], seg: &ShotSegmentation, cfg: &PipelineConfig) -> Result<Vec<CameraPose>, Error> {
    let all_masks = masks(observations);
    let canon = canonical_camera_rotation();
    let bacfg = cfg.ba_config();
    let mut cameras = Vec::with_capacity(seg.total_frames);
    for (s, e) in seg.shot_ranges() {
        let shot_tracks = slice_tracks(tracks, s, e);
        let poses = solve_sequence(&shot_tracks, &all_masks[s..e], &cfg.intrinsics, &bacfg).map_err(|err| match err {
            crate::ba::BaError::UnderConstrained { start, end, reason } => crate::ba::BaError::UnderConstrained {
                start: start + s,
                end: end + s,
                reason,
            },
            other => other,
        })?;
        cameras.extend(poses.iter().map(|p| CameraPose::new(p.r * canon, p.t)));
    }
    Ok(cameras)
}

/// Pairs per-shot motions with their cameras and checks they tile `seg`.
pub fn assemble_shots(shot_states: &[(usize, Vec<BodyState>)], cameras: &[CameraPose], seg: &ShotSegmentation) -> Result<Vec<ShotMotion>, Error> {
    let ranges = seg.shot_ranges();
    if shot_states.len() != ranges.len() {
        return Err(Error::InvalidInput(format!("{} per-shot motions but {} shots", shot_states.len(), ranges.len())));
    }
    if cameras.len() != seg.total_frames {
        return Err(Error::InvalidInput(format!("{} cameras for {} frames", cameras.len(), seg.total_frames)));
    }
    shot_states
        .iter()
        .zip(&ranges)
        .enumerate()
        .map(|(k, ((start, states), &(s, e)))| {
            if *start != s || states.len() != e - s {
                return Err(Error::InvalidInput(format!(
                    "shot {k} motion covers frames {start}..{} but the shot spans {s}..{e}",
                    start + states.len()
                )));
            }
            Ok(ShotMotion::new(states.clone(), cameras[s..e].to_vec(), k, s))
        })
        .collect()
}

pub fn stitch(shots: &[ShotMotion], rels: &[(usize, RelativePose)], cfg: &PipelineConfig) -> Result<StitchedMotion, Error> {
    if rels.len() + 1 != shots.len() {
        return Err(AlignError::CountMismatch {
            shots: shots.len(),
            rels: rels.len(),
        }
        .into());
    }
    for (k, (t, _)) in rels.iter().enumerate() {
        if shots.get(k + 1).is_some_and(|s| s.frame_range.0 != *t) {
            return Err(Error::InvalidInput(format!("calibration {k} is for frame {t}, shot {} starts at {}", k + 1, shots[k + 1].frame_range.0)));
        }
    }
    let rels: Vec<RelativePose> = rels
        .iter()
        .enumerate()
        .map(|(k, (_, r))| {
            let (tail, head) = (&shots[k], &shots[k + 1]);
            if cfg.compensate_motion && can_compensate(tail.frame_range, head.frame_range) {
                retime_to_cut(r, tail, head)
            } else {
                r.clone()
            }
        })
        .collect();
    Ok(stitch_shots(shots, &rels, &cfg.align)?)
}

/// Detects contacts on the motion and removes foot sliding from the root.
pub fn refine(motion: &StitchedMotion, fps: f64, cfg: &PipelineConfig) -> (StitchedMotion, ContactState) {
    let contacts = detect_contacts(&skeleton_sequence(&motion.states), fps, &cfg.contact);
    (refine_trajectory(motion, &contacts), contacts)
}

/// Shot-wise camera accuracy, averaged over shots.
fn camera_metrics(pred: &[CameraPose], truth: &[CameraPose], seg: &ShotSegmentation, delta: usize) -> Result<(f64, f64, f64), Error> {
    let ranges: Vec<_> = seg.shot_ranges().into_iter().filter(|(s, e)| e - s > delta.max(2)).collect();
    if ranges.is_empty() {
        return Err(Error::InvalidInput("no shot is long enough for camera metrics".into()));
    }
    let mut sum = (0.0, 0.0, 0.0);
    for &(s, e) in &ranges {
        let a = metrics::ate(&pred[s..e], &truth[s..e])?;
        let (rt, rr) = metrics::rpe(&pred[s..e], &truth[s..e], delta)?;
        sum = (sum.0 + a, sum.1 + rt, sum.2 + rr);
    }
    let n = ranges.len() as f64;
    Ok((sum.0 / n, sum.1 / n, sum.2 / n))
}

pub struct EvalInputs<'a> {
    pub predicted: &'a [BodyState],
    pub truth: &'a [BodyState],
    pub fps: f64,
    /// Contacts for foot sliding; detected on the prediction when absent.
    pub contacts: Option<&'a ContactState>,
    /// Predicted and true cameras with the segmentation they are gauged by.
    pub cameras: Option<(&'a [CameraPose], &'a [CameraPose], &'a ShotSegmentation)>,
}

pub fn evaluate(inputs: &EvalInputs, cfg: &PipelineConfig) -> Result<MetricsReport, Error> {
    let pair = MotionPair::new(inputs.predicted.to_vec(), inputs.truth.to_vec(), inputs.fps)?;
    let detected;
    let contacts = match inputs.contacts {
        Some(c) => c,
        None => {
            detected = detect_contacts(&pair.predicted_joints, inputs.fps, &cfg.contact);
            &detected
        }
    };
    let mut report = metrics::evaluate(&pair, contacts, None, &cfg.metrics)?;
    if let Some((p, t, seg)) = inputs.cameras {
        if p.len() != t.len() || p.len() != seg.total_frames {
            return Err(Error::InvalidInput(format!("camera counts {} and {} do not match {} frames", p.len(), t.len(), seg.total_frames)));
        }
        let (a, rt, rr) = camera_metrics(p, t, seg, cfg.metrics.rpe_delta)?;
        (report.ate, report.rpe_trans, report.rpe_rot) = (Some(a), Some(rt), Some(rr));
    }
    Ok(report)
}

/// Everything a run consumes.
#[derive(Debug, Clone)]
pub struct RunInputs {
    pub fps: f64,
    pub observations: Vec<FrameObservation>,
    pub tracks: Vec<PointTrack>,
    /// First frame and states of every shot.
    pub shot_states: Vec<(usize, Vec<BodyState>)>,
}

impl RunInputs {
    pub fn from_bundle(b: &GroundTruthBundle) -> Self {
        let shot_states = b.shot_motions().into_iter().map(|m| (m.frame_range.0, m.states)).collect();
        Self {
            fps: b.spec.fps,
            observations: b.observations.clone(),
            tracks: b.tracks.clone(),
            shot_states,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub segmentation: ShotSegmentation,
    pub calibration: Vec<(usize, RelativePose)>,
    /// Per-frame cameras in shot frames.
    pub cameras: Vec<CameraPose>,
    pub stitched: StitchedMotion,
    pub refined: StitchedMotion,
    pub contacts: ContactState,
    pub naive: StitchedMotion,
}

pub fn run(inputs: &RunInputs, cfg: &PipelineConfig) -> Result<RunOutput, Error> {
    let segmentation = detect(&inputs.observations, cfg)?;
    let calibration = calibrate(&inputs.observations, &segmentation, cfg)?;
    let cameras = solve_cameras(&inputs.tracks, &inputs.observations, &segmentation, cfg)?;
    let shots = assemble_shots(&inputs.shot_states, &cameras, &segmentation)?;
    let stitched = stitch(&shots, &calibration, cfg)?;
    let naive = concatenate_naive(&shots)?;
    let (refined, contacts) = refine(&stitched, inputs.fps, cfg);
    if refined.states.len() != segmentation.total_frames {
        return Err(Error::Invariant(format!("refined motion has {} frames, expected {}", refined.states.len(), segmentation.total_frames)));
    }
    Ok(RunOutput {
        segmentation,
        calibration,
        cameras,
        stitched,
        refined,
        contacts,
        naive,
    })
}

/// Ground truth read from a bundle's `truth/` directory.
#[derive(Debug, Clone)]
pub struct Truth {
    pub motion: Vec<BodyState>,
    pub cameras: Vec<CameraPose>,
    pub segmentation: ShotSegmentation,
    pub contacts: ContactState,
}

pub fn metric_records(video: &str, report: &MetricsReport) -> Vec<MetricRecord> {
    report
        .records()
        .into_iter()
        .map(|(metric, value, unit)| MetricRecord {
            video: video.to_string(),
            metric: metric.to_string(),
            value,
            unit: unit.to_string(),
        })
        .collect()
}

fn detection_records(video: &str, score: &DetectionScore) -> Vec<MetricRecord> {
    [("detect_recall", score.recall), ("detect_precision", score.precision), ("detect_f1", score.f1)]
        .into_iter()
        .map(|(m, v)| MetricRecord {
            video: video.into(),
            metric: m.into(),
            value: v,
            unit: "ratio".into(),
        })
        .collect()
}

/// Metrics of a run against ground truth, including the naive-concatenation
/// orientation error and the shot detector's score.
pub fn score_run(video: &str, fps: f64, out: &RunOutput, truth: &Truth, cfg: &PipelineConfig) -> Result<Vec<MetricRecord>, Error> {
    let report = evaluate(
        &EvalInputs {
            predicted: &out.refined.states,
            truth: &truth.motion,
            fps,
            contacts: Some(&out.contacts),
            cameras: Some((&out.cameras, &truth.cameras, &out.segmentation)),
        },
        cfg,
    )?;
    let naive = MotionPair::new(out.naive.states.clone(), truth.motion.clone(), fps)?;
    let mut records = metric_records(video, &report);
    records.push(MetricRecord {
        video: video.into(),
        metric: "roe_naive".into(),
        value: metrics::roe(&naive),
        unit: "deg".into(),
    });
    records.extend(detection_records(video, &evaluate_detector(&out.segmentation, &truth.segmentation, cfg.slack)));
    Ok(records)
}

// ---- file-level commands ----

fn require(path: &Path) -> Result<(), Error> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Missing(path.to_path_buf()))
    }
}

/// Writes a synthetic bundle; returns the written files.
pub fn cmd_synth(spec: &SceneSpec, out: &Path) -> Result<Vec<PathBuf>, Error> {
    let b = generate(spec)?;
    write_bundle(&b, out)
}

pub fn write_bundle(b: &GroundTruthBundle, out: &Path) -> Result<Vec<PathBuf>, Error> {
    let fps = b.spec.fps;
    let truth = out.join(TRUTH_DIR);
    let mut written = Vec::new();
    let mut w = |p: PathBuf| {
        written.push(p.clone());
        p
    };
    io::write_observations(&w(out.join(OBSERVATIONS_FILE)), fps, &b.observations)?;
    io::write_tracks(&w(out.join(TRACKS_FILE)), fps, b.motion.len(), &b.tracks)?;
    for shot in b.shot_motions() {
        io::write_poses(&w(out.join(shot_pose_file(shot.shot_index))), fps, shot.frame_range.0, &shot.states)?;
    }
    io::write_poses(&w(truth.join(POSE_FILE)), fps, 0, &b.motion)?;
    io::write_cameras(&w(truth.join(CAMERAS_FILE)), fps, &b.intrinsics, 0, &b.cameras)?;
    io::write_transitions(&w(truth.join(TRANSITIONS_FILE)), fps, &b.segmentation)?;
    io::write_contacts(&w(truth.join(CONTACTS_FILE)), fps, &b.contact_schedule)?;
    Ok(written)
}

pub fn read_run_inputs(bundle: &Path) -> Result<RunInputs, Error> {
    let obs_path = bundle.join(OBSERVATIONS_FILE);
    let tracks_path = bundle.join(TRACKS_FILE);
    require(&obs_path)?;
    require(&tracks_path)?;
    let (fps, observations) = io::read_observations(&obs_path)?;
    let (_, n, tracks) = io::read_tracks(&tracks_path)?;
    if n != observations.len() {
        return Err(Error::InvalidInput(format!("tracks cover {n} frames, observations {}", observations.len())));
    }
    let mut shot_states = Vec::new();
    while bundle.join(shot_pose_file(shot_states.len())).exists() {
        let (_, start, states) = io::read_poses(&bundle.join(shot_pose_file(shot_states.len())))?;
        shot_states.push((start, states));
    }
    if shot_states.is_empty() {
        return Err(Error::Missing(bundle.join(shot_pose_file(0))));
    }
    Ok(RunInputs {
        fps,
        observations,
        tracks,
        shot_states,
    })
}

pub fn read_truth(bundle: &Path) -> Result<Option<Truth>, Error> {
    let dir = bundle.join(TRUTH_DIR);
    if !dir.is_dir() {
        return Ok(None);
    }
    let (_, _, motion) = io::read_poses(&dir.join(POSE_FILE))?;
    let (_, _, _, cameras) = io::read_cameras(&dir.join(CAMERAS_FILE))?;
    let (_, segmentation) = io::read_transitions(&dir.join(TRANSITIONS_FILE))?;
    let (_, contacts) = io::read_contacts(&dir.join(CONTACTS_FILE))?;
    Ok(Some(Truth {
        motion,
        cameras,
        segmentation,
        contacts,
    }))
}

pub fn cmd_detect(observations: &Path, out: &Path, cfg: &PipelineConfig) -> Result<ShotSegmentation, Error> {
    require(observations)?;
    let (fps, obs) = io::read_observations(observations)?;
    let seg = detect(&obs, cfg)?;
    io::write_transitions(out, fps, &seg)?;
    Ok(seg)
}

fn read_segmented_observations(observations: &Path, transitions: &Path) -> Result<(f64, Vec<FrameObservation>, ShotSegmentation), Error> {
    require(observations)?;
    require(transitions)?;
    let (fps, obs) = io::read_observations(observations)?;
    let (_, seg) = io::read_transitions(transitions)?;
    if seg.total_frames != obs.len() {
        return Err(Error::InvalidInput(format!("transitions cover {} frames, observations {}", seg.total_frames, obs.len())));
    }
    Ok((fps, obs, seg))
}

pub fn cmd_calibrate(observations: &Path, transitions: &Path, out: &Path, cfg: &PipelineConfig) -> Result<Vec<(usize, RelativePose)>, Error> {
    let (fps, obs, seg) = read_segmented_observations(observations, transitions)?;
    let rels = calibrate(&obs, &seg, cfg)?;
    io::write_calibration(out, fps, &rels)?;
    Ok(rels)
}

pub fn cmd_ba(tracks: &Path, observations: &Path, transitions: &Path, out: &Path, cfg: &PipelineConfig) -> Result<Vec<CameraPose>, Error> {
    let (fps, obs, seg) = read_segmented_observations(observations, transitions)?;
    require(tracks)?;
    let (_, n, tr) = io::read_tracks(tracks)?;
    if n != obs.len() {
        return Err(Error::InvalidInput(format!("tracks cover {n} frames, observations {}", obs.len())));
    }
    let cameras = solve_cameras(&tr, &obs, &seg, cfg)?;
    io::write_cameras(out, fps, &cfg.intrinsics, 0, &cameras)?;
    Ok(cameras)
}

/// Stitches per-shot motion files; writes the stitched pose and, when
/// `out_cameras` is given, the cameras carried into the stitched frame.
pub fn cmd_stitch(shots: &[PathBuf], calibration: &Path, cameras: &Path, out_pose: &Path, out_cameras: Option<&Path>, cfg: &PipelineConfig) -> Result<StitchedMotion, Error> {
    require(calibration)?;
    require(cameras)?;
    let mut shot_states = Vec::with_capacity(shots.len());
    let mut fps = 0.0;
    for p in shots {
        require(p)?;
        let (f, start, states) = io::read_poses(p)?;
        fps = f;
        shot_states.push((start, states));
    }
    let (_, rels) = io::read_calibration(calibration)?;
    let (_, k, _, cams) = io::read_cameras(cameras)?;
    let seg = ShotSegmentation::new(rels.iter().map(|r| r.0).collect(), cams.len())?;
    let motions = assemble_shots(&shot_states, &cams, &seg)?;
    let stitched = stitch(&motions, &rels, cfg)?;
    io::write_poses(out_pose, fps, 0, &stitched.states)?;
    if let Some(p) = out_cameras {
        io::write_cameras(p, fps, &k, 0, &stitched.cameras)?;
    }
    Ok(stitched)
}

pub fn cmd_refine(pose: &Path, out_pose: &Path, out_contacts: &Path, cfg: &PipelineConfig) -> Result<ContactState, Error> {
    require(pose)?;
    let (fps, start, states) = io::read_poses(pose)?;
    let motion = StitchedMotion {
        provenance: vec![0; states.len()],
        cameras: Vec::new(),
        applied_offsets: Vec::new(),
        states,
    };
    let (refined, contacts) = refine(&motion, fps, cfg);
    io::write_poses(out_pose, fps, start, &refined.states)?;
    io::write_contacts(out_contacts, fps, &contacts)?;
    Ok(contacts)
}

/// Optional inputs of [`cmd_eval`].
#[derive(Debug, Clone, Default)]
pub struct EvalFiles {
    pub contacts: Option<PathBuf>,
    pub predicted_cameras: Option<PathBuf>,
    pub truth_cameras: Option<PathBuf>,
    /// Segmentation gauging the camera tracks; one shot when absent.
    pub transitions: Option<PathBuf>,
}

pub fn cmd_eval(predicted: &Path, truth: &Path, extra: &EvalFiles, video: &str, out: &Path, cfg: &PipelineConfig) -> Result<Vec<MetricRecord>, Error> {
    require(predicted)?;
    require(truth)?;
    let (fps, _, pred) = io::read_poses(predicted)?;
    let (_, _, tru) = io::read_poses(truth)?;
    let contacts = extra.contacts.as_deref().map(|p| require(p).and_then(|_| Ok(io::read_contacts(p)?.1))).transpose()?;
    let cams = match (&extra.predicted_cameras, &extra.truth_cameras) {
        (Some(p), Some(t)) => {
            require(p)?;
            require(t)?;
            let seg = match &extra.transitions {
                Some(s) => io::read_transitions(s)?.1,
                None => ShotSegmentation::new(Vec::new(), pred.len())?,
            };
            Some((io::read_cameras(p)?.3, io::read_cameras(t)?.3, seg))
        }
        (None, None) => None,
        _ => return Err(Error::InvalidInput("camera evaluation needs both predicted and true cameras".into())),
    };
    let report = evaluate(
        &EvalInputs {
            predicted: &pred,
            truth: &tru,
            fps,
            contacts: contacts.as_ref(),
            cameras: cams.as_ref().map(|(p, t, s)| (p.as_slice(), t.as_slice(), s)),
        },
        cfg,
    )?;
    let records = metric_records(video, &report);
    io::write_metrics(out, fps, &records)?;
    Ok(records)
}

/// Full pipeline over a bundle directory. Writes every stage artifact to
/// `out` and, when the bundle has ground truth, a metrics report.
pub fn cmd_run(bundle: &Path, out: &Path, video: &str, cfg: &PipelineConfig) -> Result<Option<Vec<MetricRecord>>, Error> {
    let inputs = read_run_inputs(bundle)?;
    let result = run(&inputs, cfg)?;
    let fps = inputs.fps;
    io::write_transitions(&out.join(TRANSITIONS_FILE), fps, &result.segmentation)?;
    io::write_calibration(&out.join(CALIBRATION_FILE), fps, &result.calibration)?;
    io::write_cameras(&out.join(CAMERAS_FILE), fps, &cfg.intrinsics, 0, &result.cameras)?;
    io::write_cameras(&out.join(WORLD_CAMERAS_FILE), fps, &cfg.intrinsics, 0, &result.refined.cameras)?;
    io::write_poses(&out.join(POSE_FILE), fps, 0, &result.refined.states)?;
    io::write_contacts(&out.join(CONTACTS_FILE), fps, &result.contacts)?;
    match read_truth(bundle)? {
        Some(truth) => {
            let records = score_run(video, fps, &result, &truth, cfg)?;
            io::write_metrics(&out.join(METRICS_FILE), fps, &records)?;
            Ok(Some(records))
        }
        None => Ok(None),
    }
}

/// Rotation error in degrees of a relative pose against a reference.
pub fn rotation_error_deg(a: &RotationMatrix, b: &RotationMatrix) -> f64 {
    crate::geom::geodesic_distance(a, b).to_degrees()
}

//! Synthetic multi-shot scenes with exact ground truth.
//!
//! A walking (or idling) stick figure is generated analytically: the root
//! follows a constant-speed path, feet are planted flat on footholds laid
//! along it and the legs are posed by two-bone IK. Several level cameras on a
//! ring around the subject film it; the video cuts between them at random
//! frames. Every frame yields projected body keypoints and a detection box,
//! and static scene points are tracked within each shot.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::align::{canonical_camera_rotation, BodyState, ShotMotion, BODY_JOINTS};
use crate::ba::{slice_tracks, PointTrack};
use crate::epipolar::CorrespondenceSet;
use crate::geom::{exp_so3, log_so3, AxisAngle, CameraPose, Intrinsics, RotationMatrix};
use crate::shotdet::{BBox, FrameObservation, Keypoint, Keypoints2D, ShotSegmentation};
use crate::traj::{forward_kinematics, rest_offset, ContactState, SkeletonFrame, LEFT_ANKLE, LEFT_HIP, LEFT_KNEE, RIGHT_ANKLE, RIGHT_HIP, RIGHT_KNEE};

pub const VALID_SHOT_COUNTS: [usize; 3] = [2, 3, 4];
pub const IMAGE_WIDTH: u32 = 1280;
pub const IMAGE_HEIGHT: u32 = 960;
pub const FOCAL_PX: f64 = 700.0;

const RING_RADIUS: f64 = 4.0;
const CAMERA_HEIGHT: f64 = 1.5;
const ORBIT_RATE: f64 = 0.004;
const SPAWN_EVERY: usize = 12;
const MIN_POINT_DEPTH: f64 = 4.0;
const MAX_POINT_DEPTH: f64 = 14.0;
const BODY_TRACKS_PER_SHOT: usize = 6;
const BBOX_PAD: f64 = 0.15;

const WALK_SPEED: f64 = 1.0;
const STEPS_PER_SECOND: f64 = 1.8;
const STANCE_FRACTION: f64 = 0.6;
const PELVIS_HEIGHT: f64 = 0.80;
const PELVIS_BOB: f64 = 0.015;
const ANKLE_HEIGHT: f64 = 0.06;
const SWING_LIFT: f64 = 0.12;
const FOOT_LATERAL: f64 = 0.09;
const CIRCLE_RADIUS: f64 = 1.5;
const EIGHT_SIZE: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("shot count {0} is not supported; valid values are {{2, 3, 4}}")]
    InvalidShotCount(usize),
    #[error("{duration} frames cannot hold {shots} shots of at least {min_len} frames")]
    Infeasible { duration: usize, shots: usize, min_len: usize },
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionKind {
    WalkCircle,
    WalkLine,
    FigureEight,
    Idle,
}

impl MotionKind {
    pub const ALL: [MotionKind; 4] = [MotionKind::WalkCircle, MotionKind::WalkLine, MotionKind::FigureEight, MotionKind::Idle];

    pub fn name(self) -> &'static str {
        match self {
            MotionKind::WalkCircle => "walk_circle",
            MotionKind::WalkLine => "walk_line",
            MotionKind::FigureEight => "figure_eight",
            MotionKind::Idle => "idle",
        }
    }
}

impl fmt::Display for MotionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MotionKind {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MotionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| SynthError::InvalidSpec(format!("unknown motion kind '{s}' (expected walk_circle, walk_line, figure_eight or idle)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub duration_frames: usize,
    pub fps: f64,
    pub motion_kind: MotionKind,
    pub camera_count: usize,
    pub shot_count: usize,
    /// Static scene points spawned over the whole video.
    pub static_point_count: usize,
    pub keypoint_noise_px: f64,
    pub outlier_fraction: f64,
    /// Uniform jitter of each box edge, as a fraction of the box size.
    pub bbox_jitter: f64,
    pub min_shot_len: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            duration_frames: 300,
            fps: 30.0,
            motion_kind: MotionKind::WalkCircle,
            camera_count: 4,
            shot_count: 3,
            static_point_count: 1200,
            keypoint_noise_px: 0.0,
            outlier_fraction: 0.0,
            bbox_jitter: 0.0,
            min_shot_len: 30,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !VALID_SHOT_COUNTS.contains(&self.shot_count) {
            return Err(SynthError::InvalidShotCount(self.shot_count));
        }
        if self.min_shot_len == 0 || self.duration_frames < self.shot_count * self.min_shot_len {
            return Err(SynthError::Infeasible {
                duration: self.duration_frames,
                shots: self.shot_count,
                min_len: self.min_shot_len,
            });
        }
        if self.camera_count < 2 {
            return Err(SynthError::InvalidSpec(format!("camera_count must be at least 2, got {}", self.camera_count)));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(SynthError::InvalidSpec(format!("fps must be positive, got {}", self.fps)));
        }
        if !(self.keypoint_noise_px >= 0.0 && self.keypoint_noise_px.is_finite()) {
            return Err(SynthError::InvalidSpec(format!("keypoint noise must be non-negative, got {}", self.keypoint_noise_px)));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(SynthError::InvalidSpec(format!("outlier fraction must be in [0, 1), got {}", self.outlier_fraction)));
        }
        if !(0.0..0.5).contains(&self.bbox_jitter) {
            return Err(SynthError::InvalidSpec(format!("bbox jitter must be in [0, 0.5), got {}", self.bbox_jitter)));
        }
        Ok(())
    }
}

/// Heading and origin of a shot's own frame inside the world frame: the
/// shot's first camera looks along +Z and the subject starts above the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShotFrame {
    pub heading: f64,
    pub origin: Vector3<f64>,
}

impl ShotFrame {
    pub fn rotation(&self) -> RotationMatrix {
        RotationMatrix::about_y(self.heading)
    }

    /// World state expressed in the shot frame.
    pub fn state_to_shot(&self, s: &BodyState) -> BodyState {
        let yt = self.rotation().transpose().0;
        let mut out = *s;
        out.root_orient = AxisAngle(log_so3(&(yt * s.root_rotation().0)));
        out.translation = yt * (s.translation - self.origin);
        out
    }

    pub fn camera_to_shot(&self, c: &CameraPose) -> CameraPose {
        let y = self.rotation().0;
        CameraPose::new(RotationMatrix(c.r.0 * y), c.t + c.r.0 * self.origin)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthBundle {
    pub spec: SceneSpec,
    pub intrinsics: Intrinsics,
    /// World-frame motion.
    pub motion: Vec<BodyState>,
    /// Active camera at every frame, world frame.
    pub cameras: Vec<CameraPose>,
    pub cameras_per_shot: Vec<Vec<CameraPose>>,
    pub camera_ids: Vec<usize>,
    pub shot_frames: Vec<ShotFrame>,
    pub segmentation: ShotSegmentation,
    pub observations: Vec<FrameObservation>,
    /// Point tracks indexed by video frame; each lives inside one shot.
    pub tracks: Vec<PointTrack>,
    /// Which tracks are attached to the moving subject.
    pub body_track: Vec<bool>,
    pub contact_schedule: ContactState,
}

impl GroundTruthBundle {
    /// Ground-truth motion and cameras of shot `k` in that shot's own frame.
    pub fn shot_motion(&self, k: usize) -> ShotMotion {
        let (start, end) = self.segmentation.shot_ranges()[k];
        let frame = &self.shot_frames[k];
        let states = self.motion[start..end].iter().map(|s| frame.state_to_shot(s)).collect();
        let cameras = self.cameras[start..end].iter().map(|c| frame.camera_to_shot(c)).collect();
        ShotMotion::new(states, cameras, k, start)
    }

    pub fn shot_motions(&self) -> Vec<ShotMotion> {
        (0..self.segmentation.shot_count()).map(|k| self.shot_motion(k)).collect()
    }

    /// Tracks restricted to shot `k`, re-indexed from the shot's first frame.
    pub fn shot_tracks(&self, k: usize) -> Vec<PointTrack> {
        let (start, end) = self.segmentation.shot_ranges()[k];
        slice_tracks(&self.tracks, start, end)
    }
}

pub fn default_intrinsics() -> Intrinsics {
    Intrinsics::new(FOCAL_PX, FOCAL_PX, IMAGE_WIDTH as f64 / 2.0, IMAGE_HEIGHT as f64 / 2.0).expect("positive focal length")
}

fn in_image(p: &Vector2<f64>) -> bool {
    p.x >= 0.0 && p.x < IMAGE_WIDTH as f64 && p.y >= 0.0 && p.y < IMAGE_HEIGHT as f64
}

/// Horizontal path parameterized by arc length.
#[derive(Debug, Clone)]
enum Path {
    Line { heading: f64 },
    Circle { radius: f64, start: f64, dir: f64 },
    Eight { yaw: f64, table: Vec<(f64, f64)>, length: f64 },
    Still { heading: f64 },
}

impl Path {
    fn new(kind: MotionKind, rng: &mut ChaCha8Rng) -> Self {
        let heading = rng.random_range(-PI..PI);
        match kind {
            MotionKind::WalkLine => Path::Line { heading },
            MotionKind::WalkCircle => Path::Circle {
                radius: CIRCLE_RADIUS,
                start: heading,
                dir: if rng.random_bool(0.5) { 1.0 } else { -1.0 },
            },
            MotionKind::FigureEight => {
                // Gerono lemniscate x = a sin u, z = a sin u cos u, tabulated by arc length
                let n = 4096;
                let mut table = Vec::with_capacity(n + 1);
                let mut s = 0.0;
                let point = |u: f64| Vector2::new(EIGHT_SIZE * u.sin(), EIGHT_SIZE * u.sin() * u.cos());
                table.push((0.0, 0.0));
                for i in 1..=n {
                    let (u0, u1) = ((i - 1) as f64 * TAU / n as f64, i as f64 * TAU / n as f64);
                    s += (point(u1) - point(u0)).norm();
                    table.push((s, u1));
                }
                Path::Eight { yaw: heading, table, length: s }
            }
            MotionKind::Idle => Path::Still { heading },
        }
    }

    /// Position (y = 0) and walking heading at arc length `s`.
    fn at(&self, s: f64) -> (Vector3<f64>, f64) {
        match self {
            Path::Line { heading } => (s * Vector3::new(heading.sin(), 0.0, heading.cos()), *heading),
            Path::Circle { radius, start, dir } => {
                // starts at the origin walking along `start`, turning toward +X when dir > 0
                let l = Vector3::new(radius * (1.0 - (s / radius).cos()) * dir, 0.0, radius * (s / radius).sin());
                let h_local = (dir * (s / radius).sin()).atan2((s / radius).cos());
                let r = RotationMatrix::about_y(*start).0;
                (r * l, start + h_local)
            }
            Path::Eight { yaw, table, length } => {
                let sm = s.rem_euclid(*length);
                let i = table.partition_point(|e| e.0 < sm).clamp(1, table.len() - 1);
                let (s0, u0) = table[i - 1];
                let (s1, u1) = table[i];
                let u = if s1 > s0 { u0 + (u1 - u0) * (sm - s0) / (s1 - s0) } else { u0 };
                let l = Vector3::new(EIGHT_SIZE * u.sin(), 0.0, EIGHT_SIZE * u.sin() * u.cos());
                let d = Vector3::new(EIGHT_SIZE * u.cos(), 0.0, EIGHT_SIZE * (2.0 * u).cos());
                let r = RotationMatrix::about_y(*yaw).0;
                (r * l, yaw + d.x.atan2(d.z))
            }
            Path::Still { heading } => (Vector3::zeros(), *heading),
        }
    }
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(TAU) - PI
}

/// Analytic gait along a path.
#[derive(Debug, Clone)]
struct Gait {
    path: Path,
    idle: bool,
    stride_period: f64,
    shape: [f64; 10],
}

struct FootPose {
    ankle: Vector3<f64>,
    yaw: f64,
    planted: bool,
}

impl Gait {
    fn new(kind: MotionKind, rng: &mut ChaCha8Rng) -> Self {
        let path = Path::new(kind, rng);
        let normal = Normal::new(0.0, 0.5).expect("valid sigma");
        let mut shape = [0.0; 10];
        for v in &mut shape {
            *v = normal.sample(rng);
        }
        Self {
            path,
            idle: kind == MotionKind::Idle,
            stride_period: 2.0 / STEPS_PER_SECOND,
            shape,
        }
    }

    fn side(left: bool) -> f64 {
        if left {
            1.0
        } else {
            -1.0
        }
    }

    fn lateral(heading: f64) -> Vector3<f64> {
        // body left (+X in the body frame) after turning to `heading`
        Vector3::new(heading.cos(), 0.0, -heading.sin())
    }

    fn foothold(&self, left: bool, t_mid: f64) -> (Vector3<f64>, f64) {
        let (p, h) = self.path.at(WALK_SPEED * t_mid);
        (p + Self::lateral(h) * (Self::side(left) * FOOT_LATERAL) + Vector3::new(0.0, ANKLE_HEIGHT, 0.0), h)
    }

    fn phase_offset(left: bool) -> f64 {
        if left {
            0.0
        } else {
            0.5
        }
    }

    fn foot(&self, left: bool, t: f64) -> FootPose {
        if self.idle {
            let (p, h) = self.path.at(0.0);
            return FootPose {
                ankle: p + Self::lateral(h) * (Self::side(left) * FOOT_LATERAL) + Vector3::new(0.0, ANKLE_HEIGHT, 0.0),
                yaw: h,
                planted: true,
            };
        }
        let phi0 = Self::phase_offset(left);
        let g = t / self.stride_period + phi0;
        let k = g.floor();
        let phase = g - k;
        let t_mid = |cycle: f64| (cycle + STANCE_FRACTION / 2.0 - phi0) * self.stride_period;
        let (a0, y0) = self.foothold(left, t_mid(k));
        if phase < STANCE_FRACTION {
            return FootPose { ankle: a0, yaw: y0, planted: true };
        }
        let (a1, y1) = self.foothold(left, t_mid(k + 1.0));
        let u = (phase - STANCE_FRACTION) / (1.0 - STANCE_FRACTION);
        let w = smoothstep(u);
        let mut ankle = a0 + (a1 - a0) * w;
        ankle.y = ANKLE_HEIGHT + SWING_LIFT * (PI * u).sin().powi(2);
        FootPose {
            ankle,
            yaw: y0 + wrap_angle(y1 - y0) * w,
            planted: false,
        }
    }

    fn contacts(&self, t: f64) -> (bool, bool) {
        (self.foot(true, t).planted, self.foot(false, t).planted)
    }

    fn state(&self, t: f64) -> BodyState {
        let mut s = BodyState::rest();
        s.shape = self.shape;
        let (p, heading, swing) = if self.idle {
            let (p, h) = self.path.at(0.0);
            let sway = 0.02 * (TAU * 0.3 * t).sin();
            (p + Self::lateral(h) * sway, h, 0.05 * (TAU * 0.3 * t).sin())
        } else {
            let (p, h) = self.path.at(WALK_SPEED * t);
            (p, h, 0.35 * (TAU * t / self.stride_period).sin())
        };
        let bob = if self.idle { 0.0 } else { PELVIS_BOB * (2.0 * TAU * t / self.stride_period).cos() };
        s.translation = p + Vector3::new(0.0, PELVIS_HEIGHT + bob, 0.0);
        let root = RotationMatrix::about_y(heading);
        s.root_orient = AxisAngle::new(0.0, heading, 0.0);

        // arms hang down and swing against the legs
        let set = |s: &mut BodyState, j: usize, m: Matrix3<f64>| s.body_pose[j - 1] = AxisAngle(log_so3(&m));
        set(&mut s, 16, RotationMatrix::about_x(-swing).0 * RotationMatrix::about_z(-1.25).0);
        set(&mut s, 17, RotationMatrix::about_x(swing).0 * RotationMatrix::about_z(1.25).0);
        set(&mut s, 18, RotationMatrix::about_z(-0.2).0);
        set(&mut s, 19, RotationMatrix::about_z(0.2).0);

        for left in [true, false] {
            let foot = self.foot(left, t);
            let (hip, knee, ankle) = if left { (LEFT_HIP, LEFT_KNEE, LEFT_ANKLE) } else { (RIGHT_HIP, RIGHT_KNEE, RIGHT_ANKLE) };
            let hip_pos = s.translation + root.0 * rest_offset(hip);
            let target = foot.ankle - hip_pos;
            let (o_knee, o_ankle) = (rest_offset(knee), rest_offset(ankle));
            let flex = knee_flexion(&o_knee, &o_ankle, target.norm());
            let r_knee = RotationMatrix::about_x(flex).0;
            let leg = o_knee + r_knee * o_ankle;
            let r_hip = min_arc(&leg, &(root.0.transpose() * target));
            let r_ankle = (root.0 * r_hip * r_knee).transpose() * RotationMatrix::about_y(foot.yaw).0;
            set(&mut s, hip, r_hip);
            set(&mut s, knee, r_knee);
            set(&mut s, ankle, r_ankle);
        }
        s
    }
}

/// Knee angle about the local X axis bringing the ankle to `distance` from
/// the hip; clamps to a straight leg when out of reach.
fn knee_flexion(o_knee: &Vector3<f64>, o_ankle: &Vector3<f64>, distance: f64) -> f64 {
    let reach = |a: f64| (o_knee + RotationMatrix::about_x(a).0 * o_ankle).norm();
    let (mut lo, mut hi) = (0.0, 2.5);
    if distance >= reach(lo) {
        return lo;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if reach(mid) > distance {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Smallest rotation taking direction `a` to direction `b`.
fn min_arc(a: &Vector3<f64>, b: &Vector3<f64>) -> Matrix3<f64> {
    let (a, b) = (a.normalize(), b.normalize());
    let axis = a.cross(&b);
    let s = axis.norm();
    if s < 1e-15 {
        return Matrix3::identity();
    }
    exp_so3(&(axis / s * s.atan2(a.dot(&b))))
}

/// Ground-truth motion and contact schedule of `n` frames.
pub fn generate_motion(kind: MotionKind, n: usize, fps: f64, seed: u64) -> (Vec<BodyState>, ContactState) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    motion_with(&Gait::new(kind, &mut rng), n, fps)
}

fn motion_with(gait: &Gait, n: usize, fps: f64) -> (Vec<BodyState>, ContactState) {
    let motion: Vec<BodyState> = (0..n).map(|f| gait.state(f as f64 / fps)).collect();
    let (left, right): (Vec<bool>, Vec<bool>) = (0..n).map(|f| gait.contacts(f as f64 / fps)).unzip();
    let root_velocity = (0..n)
        .map(|f| {
            if n < 2 {
                return Vector3::zeros();
            }
            let (a, b) = (f.saturating_sub(1), (f + 1).min(n - 1));
            (motion[b].translation - motion[a].translation) * fps / (b - a) as f64
        })
        .collect();
    (motion, ContactState { left, right, root_velocity })
}

/// Cut points with every shot at least `min_len` long, uniform over all
/// valid configurations.
fn draw_cuts(n: usize, shots: usize, min_len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let free = n - shots * min_len;
    let mut marks: Vec<usize> = (0..shots - 1).map(|_| rng.random_range(0..=free)).collect();
    marks.sort_unstable();
    marks.iter().enumerate().map(|(i, m)| m + (i + 1) * min_len).collect()
}

/// Level camera on the ring, looking at the subject.
fn ring_camera(subject: &Vector3<f64>, angle: f64) -> CameraPose {
    let center = Vector3::new(subject.x, CAMERA_HEIGHT, subject.z) + RING_RADIUS * Vector3::new(angle.sin(), 0.0, angle.cos());
    let cam_to_world = RotationMatrix::about_y(angle + PI) * canonical_camera_rotation();
    CameraPose::from_center(cam_to_world, center)
}

pub fn generate(spec: &SceneSpec) -> Result<GroundTruthBundle, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.duration_frames;
    let k = default_intrinsics();

    let gait = Gait::new(spec.motion_kind, &mut rng);
    let (motion, contact_schedule) = motion_with(&gait, n, spec.fps);
    let skeletons: Vec<SkeletonFrame> = motion.iter().map(forward_kinematics).collect();

    let transitions = draw_cuts(n, spec.shot_count, spec.min_shot_len, &mut rng);
    let segmentation = ShotSegmentation::new(transitions, n).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    let ranges = segmentation.shot_ranges();

    let phase = rng.random_range(0.0..TAU);
    let orbit = if rng.random_bool(0.5) { ORBIT_RATE } else { -ORBIT_RATE };
    let mut camera_ids = Vec::with_capacity(ranges.len());
    for i in 0..ranges.len() {
        let id = loop {
            let c = rng.random_range(0..spec.camera_count);
            if i == 0 || c != camera_ids[i - 1] {
                break c;
            }
        };
        camera_ids.push(id);
    }
    let camera_at = |f: usize, id: usize| {
        let angle = phase + TAU * id as f64 / spec.camera_count as f64 + orbit * f as f64;
        ring_camera(&motion[f].translation, angle)
    };
    let mut cameras = Vec::with_capacity(n);
    let mut cameras_per_shot = Vec::with_capacity(ranges.len());
    let mut shot_frames = Vec::with_capacity(ranges.len());
    for (&(s, e), &id) in ranges.iter().zip(&camera_ids) {
        let shot: Vec<CameraPose> = (s..e).map(|f| camera_at(f, id)).collect();
        let first = shot[0];
        let forward = first.r.transpose().0 * Vector3::new(0.0, 0.0, 1.0);
        let root = motion[s].translation;
        shot_frames.push(ShotFrame {
            heading: forward.x.atan2(forward.z),
            origin: Vector3::new(root.x, 0.0, root.z),
        });
        cameras.extend_from_slice(&shot);
        cameras_per_shot.push(shot);
    }

    let observations = observe(spec, &k, &skeletons, &cameras, &segmentation, &mut rng);
    let (tracks, body_track) = make_tracks(spec, &k, &skeletons, &cameras, &ranges, &mut rng);

    Ok(GroundTruthBundle {
        spec: spec.clone(),
        intrinsics: k,
        motion,
        cameras,
        cameras_per_shot,
        camera_ids,
        shot_frames,
        segmentation,
        observations,
        tracks,
        body_track,
        contact_schedule,
    })
}

/// Exact projections of the body joints through the active camera.
pub fn project_skeleton(k: &Intrinsics, camera: &CameraPose, skel: &SkeletonFrame) -> Vec<Option<Vector2<f64>>> {
    skel.joints.iter().map(|x| crate::geom::project(k, camera, x).ok().filter(in_image)).collect()
}

fn observe(spec: &SceneSpec, k: &Intrinsics, skeletons: &[SkeletonFrame], cameras: &[CameraPose], seg: &ShotSegmentation, rng: &mut ChaCha8Rng) -> Vec<FrameObservation> {
    let noise = Normal::new(0.0, spec.keypoint_noise_px.max(0.0)).expect("valid sigma");
    let cuts: std::collections::BTreeSet<usize> = seg.transitions.iter().copied().collect();
    skeletons
        .iter()
        .zip(cameras)
        .enumerate()
        .map(|(f, (skel, cam))| {
            let clean = project_skeleton(k, cam, skel);
            let visible: Vec<Vector2<f64>> = clean.iter().flatten().copied().collect();
            let base = BBox::enclosing(&visible).unwrap_or(BBox::new(0.0, 0.0, 1.0, 1.0));
            let pad = BBOX_PAD * base.width().max(base.height());
            let mut bbox = base.padded(pad);
            if spec.bbox_jitter > 0.0 {
                let (w, h) = (bbox.width(), bbox.height());
                let mut j = |size: f64| rng.random_range(-spec.bbox_jitter..=spec.bbox_jitter) * size;
                bbox = BBox::new(bbox.x_min + j(w), bbox.y_min + j(h), bbox.x_max + j(w), bbox.y_max + j(h));
            }
            let joints = clean
                .iter()
                .map(|p| match p {
                    Some(p) => {
                        let mut q = *p;
                        if spec.keypoint_noise_px > 0.0 {
                            q += Vector2::new(noise.sample(rng), noise.sample(rng));
                        }
                        if spec.outlier_fraction > 0.0 && rng.random_bool(spec.outlier_fraction) {
                            q = Vector2::new(rng.random_range(0.0..IMAGE_WIDTH as f64), rng.random_range(0.0..IMAGE_HEIGHT as f64));
                        }
                        Keypoint {
                            u: q.x,
                            v: q.y,
                            visible: true,
                            confidence: 1.0,
                        }
                    }
                    None => Keypoint {
                        u: 0.0,
                        v: 0.0,
                        visible: false,
                        confidence: 0.0,
                    },
                })
                .collect();
            FrameObservation {
                frame_index: f,
                bbox,
                keypoints: Keypoints2D { joints },
                scene_score: if cuts.contains(&f) { 0.0 } else { 1.0 },
                mask_bbox: Some(bbox),
            }
        })
        .collect()
}

fn make_tracks(
    spec: &SceneSpec,
    k: &Intrinsics,
    skeletons: &[SkeletonFrame],
    cameras: &[CameraPose],
    ranges: &[(usize, usize)],
    rng: &mut ChaCha8Rng,
) -> (Vec<PointTrack>, Vec<bool>) {
    let n = cameras.len();
    let batches: usize = ranges.iter().map(|(s, e)| (e - s).div_ceil(SPAWN_EVERY)).sum();
    let per_batch = spec.static_point_count.div_ceil(batches.max(1));
    let mut tracks = Vec::new();
    let mut body = Vec::new();

    // follow a point from `from` until it leaves the view or the shot ends
    let follow = |point: &dyn Fn(usize) -> Vector3<f64>, from: usize, end: usize| -> Vec<(usize, Vector2<f64>)> {
        let mut samples = Vec::new();
        for (f, cam) in cameras.iter().enumerate().take(end).skip(from) {
            let pc = cam.transform(&point(f));
            match k.project_camera_point(&pc).ok().filter(|p| pc.z > 0.5 && in_image(p)) {
                Some(px) => samples.push((f, px)),
                None => break,
            }
        }
        samples
    };

    for &(s, e) in ranges {
        for spawn in (s..e).step_by(SPAWN_EVERY) {
            let cam_to_world = cameras[spawn].inverse();
            for _ in 0..per_batch {
                let px = Vector2::new(rng.random_range(0.0..IMAGE_WIDTH as f64), rng.random_range(0.0..IMAGE_HEIGHT as f64));
                let depth = rng.random_range(MIN_POINT_DEPTH..MAX_POINT_DEPTH);
                let world = cam_to_world.transform(&(k.unproject(&px) * depth));
                let samples = follow(&|_| world, spawn, e);
                if samples.len() >= 2 {
                    tracks.push(PointTrack::from_samples(n, &samples));
                    body.push(false);
                }
            }
        }
        for _ in 0..BODY_TRACKS_PER_SHOT {
            // points riding on the torso
            let joint = [0usize, 3, 6, 9][rng.random_range(0..4)];
            let offset = Vector3::new(rng.random_range(-0.08..0.08), rng.random_range(-0.08..0.08), rng.random_range(-0.05..0.05));
            let samples = follow(&|f| skeletons[f].joints[joint] + offset, s, e);
            if samples.len() >= 2 {
                tracks.push(PointTrack::from_samples(n, &samples));
                body.push(true);
            }
        }
    }
    (tracks, body)
}

/// Adds a uniform `[0, yaw_max_rad]` yaw to the root over one random
/// contiguous segment and Gaussian noise to random joints at random frames.
pub fn inject_noise(motion: &[BodyState], seed: u64, yaw_max_rad: f64, pose_noise_rad: f64) -> Vec<BodyState> {
    let mut out = motion.to_vec();
    let n = out.len();
    if n == 0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if yaw_max_rad > 0.0 {
        let start = rng.random_range(0..n);
        let end = rng.random_range(start + 1..=n);
        let yaw = RotationMatrix::about_y(rng.random_range(0.0..=yaw_max_rad)).0;
        for s in &mut out[start..end] {
            s.root_orient = AxisAngle(log_so3(&(yaw * s.root_rotation().0)));
        }
    }
    if pose_noise_rad > 0.0 {
        let normal = Normal::new(0.0, pose_noise_rad).expect("valid sigma");
        for _ in 0..n.div_ceil(4) {
            let f = rng.random_range(0..n);
            let j = rng.random_range(0..BODY_JOINTS);
            let d = Vector3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng));
            let r = exp_so3(&d) * out[f].body_pose[j].to_matrix().0;
            out[f].body_pose[j] = AxisAngle(log_so3(&r));
        }
    }
    out
}

/// Two calibrated views of a random point cloud.
#[derive(Debug, Clone)]
pub struct TwoViewScene {
    pub correspondences: CorrespondenceSet,
    pub intrinsics: Intrinsics,
    /// First-camera to second-camera rotation.
    pub r_delta: RotationMatrix,
    pub t_dir: Vector3<f64>,
    pub outliers: Vec<bool>,
}

/// The second camera orbits the cloud center by a yaw in
/// `[-yaw_max_rad, yaw_max_rad]` and is shifted by a random baseline; a
/// fraction of second-view points is replaced by random pixels.
pub fn two_view_scene(seed: u64, yaw_max_rad: f64, points: usize, outlier_fraction: f64) -> TwoViewScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = default_intrinsics();
    let center = Vector3::new(0.0, 0.0, 6.0);
    let yaw = rng.random_range(-yaw_max_rad..=yaw_max_rad);
    let r = RotationMatrix::about_y(yaw);
    let shift = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-0.3..0.3), rng.random_range(-0.5..0.5));
    // X2 = r (X1 - center) + center + shift
    let t = center - r.0 * center + shift;
    let rel = CameraPose::new(r, t);
    let (mut s1, mut s2) = (Vec::with_capacity(points), Vec::with_capacity(points));
    while s1.len() < points {
        let p = center + Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-2.0..2.0), rng.random_range(-2.5..2.5));
        let q = rel.transform(&p);
        if p.z < 1.0 || q.z < 1.0 {
            continue;
        }
        let (a, b) = (k.project_camera_point(&p).expect("in front"), k.project_camera_point(&q).expect("in front"));
        s1.push(a);
        s2.push(b);
    }
    let outlier_count = (outlier_fraction * points as f64).round() as usize;
    let mut outliers = vec![false; points];
    for i in rand::seq::index::sample(&mut rng, points, outlier_count) {
        outliers[i] = true;
        s2[i] = Vector2::new(rng.random_range(0.0..IMAGE_WIDTH as f64), rng.random_range(0.0..IMAGE_HEIGHT as f64));
    }
    TwoViewScene {
        correspondences: CorrespondenceSet::all_visible(s1, s2).expect("equal lengths"),
        intrinsics: k,
        r_delta: r,
        t_dir: t.normalize(),
        outliers,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shotdet::{detect_shots, evaluate_detector, DetectorConfig};
    use crate::traj::{detect_contacts, skeleton_sequence, ContactConfig};

    fn spec(seed: u64, shots: usize) -> SceneSpec {
        SceneSpec {
            seed,
            shot_count: shots,
            duration_frames: 240,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn validation_errors() {
        let err = generate(&SceneSpec { shot_count: 5, ..SceneSpec::default() }).unwrap_err();
        assert_eq!(err, SynthError::InvalidShotCount(5));
        assert!(err.to_string().contains("{2, 3, 4}"));
        assert!(matches!(
            generate(&SceneSpec {
                duration_frames: 50,
                shot_count: 4,
                ..SceneSpec::default()
            }),
            Err(SynthError::Infeasible { .. })
        ));
        assert!("walk_sideways".parse::<MotionKind>().is_err());
        assert_eq!("figure_eight".parse::<MotionKind>().unwrap(), MotionKind::FigureEight);
    }

    #[test]
    fn two_shots_have_one_transition_and_exact_projections() {
        let b = generate(&spec(3, 2)).unwrap();
        assert_eq!(b.segmentation.transitions.len(), 1);
        for (f, obs) in b.observations.iter().enumerate() {
            let skel = forward_kinematics(&b.motion[f]);
            for (kp, x) in obs.keypoints.joints.iter().zip(&skel.joints) {
                if kp.visible {
                    let p = crate::geom::project(&b.intrinsics, &b.cameras[f], x).unwrap();
                    assert!((p - kp.position()).norm() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_bundle() {
        let s = SceneSpec {
            keypoint_noise_px: 2.0,
            outlier_fraction: 0.05,
            bbox_jitter: 0.05,
            ..spec(11, 3)
        };
        assert_eq!(generate(&s).unwrap(), generate(&s).unwrap());
    }

    #[test]
    fn shots_respect_min_length_and_switch_cameras() {
        for seed in 0..30 {
            let b = generate(&spec(seed, 4)).unwrap();
            for (s, e) in b.segmentation.shot_ranges() {
                assert!(e - s >= 30);
            }
            assert!(b.camera_ids.windows(2).all(|w| w[0] != w[1]));
        }
    }

    #[test]
    fn zero_noise_segmentation_is_recovered() {
        for seed in 0..10 {
            let b = generate(&spec(seed, 3)).unwrap();
            let pred = detect_shots(&b.observations, &DetectorConfig::default()).unwrap();
            assert_eq!(evaluate_detector(&pred, &b.segmentation, 2).f1, 1.0);
        }
    }

    #[test]
    fn feet_are_flat_and_planted_during_stance() {
        for kind in MotionKind::ALL {
            let (motion, schedule) = generate_motion(kind, 200, 30.0, 5);
            let skel = skeleton_sequence(&motion);
            for (t, f) in skel.iter().enumerate() {
                for (planted, ankle, toe) in [(schedule.left[t], LEFT_ANKLE, 10), (schedule.right[t], RIGHT_ANKLE, 11)] {
                    assert!(f.joints[toe].y > -1e-9);
                    if planted {
                        assert!((f.joints[ankle].y - ANKLE_HEIGHT).abs() < 1e-9, "{kind} {t}");
                        assert!(f.joints[toe].y.abs() < 1e-9);
                        if t > 0 && schedule.left[t - 1] == schedule.left[t] && ankle == LEFT_ANKLE {
                            assert!((f.joints[ankle] - skel[t - 1].joints[ankle]).norm() < 1e-9);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn detected_contacts_follow_the_schedule() {
        for kind in MotionKind::ALL {
            let (motion, schedule) = generate_motion(kind, 300, 30.0, 9);
            let c = detect_contacts(&skeleton_sequence(&motion), 30.0, &ContactConfig::default());
            assert!(c.agreement(&schedule) >= 0.95, "{kind}: {}", c.agreement(&schedule));
        }
    }

    #[test]
    fn shot_frames_make_first_camera_canonical() {
        let b = generate(&spec(4, 3)).unwrap();
        for k in 0..3 {
            let shot = b.shot_motion(k);
            let c = shot.cameras[0];
            assert!((c.r.0 - canonical_camera_rotation().0).norm() < 1e-9);
            let t0 = shot.states[0].translation;
            assert!(t0.x.abs() < 1e-9 && t0.z.abs() < 1e-9);
        }
    }

    #[test]
    fn walking_speed_matches() {
        let (motion, _) = generate_motion(MotionKind::WalkLine, 61, 30.0, 2);
        let d = motion[60].translation - motion[0].translation;
        assert!((Vector3::new(d.x, 0.0, d.z).norm() - 2.0).abs() < 1e-9);
        let (circle, _) = generate_motion(MotionKind::WalkCircle, 300, 30.0, 2);
        let step = |m: &[BodyState], f: usize| {
            let d = m[f + 1].translation - m[f].translation;
            Vector3::new(d.x, 0.0, d.z).norm() * 30.0
        };
        for f in [0, 100, 250] {
            assert!((step(&circle, f) - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn noise_injection() {
        let (motion, _) = generate_motion(MotionKind::WalkCircle, 120, 30.0, 1);
        assert_eq!(inject_noise(&motion, 3, 0.0, 0.0), motion);
        for seed in 0..20 {
            let noisy = inject_noise(&motion, seed, 1.0, 0.0);
            for (a, b) in noisy.iter().zip(&motion) {
                let d = crate::geom::geodesic_distance(&a.root_rotation(), &b.root_rotation());
                assert!(d <= 1.0 + 1e-9);
            }
            assert_eq!(inject_noise(&motion, seed, 1.0, 0.1), inject_noise(&motion, seed, 1.0, 0.1));
        }
    }

    #[test]
    fn body_tracks_stay_inside_the_mask() {
        let b = generate(&spec(6, 2)).unwrap();
        for (t, &is_body) in b.tracks.iter().zip(&b.body_track) {
            if is_body {
                for f in 0..t.visible.len() {
                    if t.visible[f] {
                        assert!(b.observations[f].mask_bbox.unwrap().contains(&t.positions[f]));
                    }
                }
            }
        }
    }

    #[test]
    fn two_view_scene_is_consistent() {
        let s = two_view_scene(1, 1.0, 50, 0.3);
        assert_eq!(s.outliers.iter().filter(|&&o| o).count(), 15);
        let e = crate::geom::skew(&s.t_dir) * s.r_delta.0;
        for i in 0..50 {
            if !s.outliers[i] {
                let x1 = s.intrinsics.unproject(&s.correspondences.s1[i]);
                let x2 = s.intrinsics.unproject(&s.correspondences.s2[i]);
                assert!(x2.dot(&(e * x1)).abs() < 1e-9);
            }
        }
    }
}

//! Stitching per-shot motions into one world-frame motion.
//!
//! Each shot arrives in its own frame: gravity-aligned, but with an arbitrary
//! heading. The relative camera rotation across a cut, estimated from body
//! keypoints, gives the heading offset between consecutive shot frames. Only
//! its yaw is used; offsets compose along the sequence, translations are made
//! continuous and the joint rotations are cross-faded around each cut.

use nalgebra::Vector3;
use thiserror::Error;

use crate::epipolar::RelativePose;
use crate::geom::{exp_so3, log_so3, nearest_rotation, yaw_angle, AxisAngle, CameraPose, RotationMatrix};

pub const BODY_JOINTS: usize = 23;
pub const SHAPE_DIM: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlignError {
    #[error("{shots} shots need {} relative poses, got {rels}", shots.saturating_sub(1))]
    CountMismatch { shots: usize, rels: usize },
    #[error("shot {shot} starts at frame {start}, expected {expected}")]
    NonContiguous { shot: usize, start: usize, expected: usize },
    #[error("shot {0} has mismatched state, camera and frame counts")]
    Malformed(usize),
}

/// SMPL-style body parameters for one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyState {
    pub root_orient: AxisAngle,
    pub body_pose: [AxisAngle; BODY_JOINTS],
    pub shape: [f64; SHAPE_DIM],
    /// Root translation in meters.
    pub translation: Vector3<f64>,
}

impl BodyState {
    /// Rest pose at the origin.
    pub fn rest() -> Self {
        Self {
            root_orient: AxisAngle::zero(),
            body_pose: [AxisAngle::zero(); BODY_JOINTS],
            shape: [0.0; SHAPE_DIM],
            translation: Vector3::zeros(),
        }
    }

    pub fn root_rotation(&self) -> RotationMatrix {
        self.root_orient.to_matrix()
    }

    /// Rotation of node `j` of the 24-node tree (0 is the root).
    pub fn node_rotation(&self, j: usize) -> RotationMatrix {
        if j == 0 {
            self.root_orient.to_matrix()
        } else {
            self.body_pose[j - 1].to_matrix()
        }
    }

    fn set_node_rotation(&mut self, j: usize, r: &nalgebra::Matrix3<f64>) {
        let a = AxisAngle(log_so3(r));
        if j == 0 {
            self.root_orient = a;
        } else {
            self.body_pose[j - 1] = a;
        }
    }
}

/// Per-shot motion in the shot's own frame, with the cameras that observed it.
#[derive(Debug, Clone, PartialEq)]
pub struct ShotMotion {
    pub states: Vec<BodyState>,
    pub cameras: Vec<CameraPose>,
    pub shot_index: usize,
    /// Half-open range of video frames.
    pub frame_range: (usize, usize),
}

/// World-to-camera rotation of a level camera looking along world +Z.
pub fn canonical_camera_rotation() -> RotationMatrix {
    RotationMatrix(nalgebra::Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0)))
}

impl ShotMotion {
    pub fn new(states: Vec<BodyState>, cameras: Vec<CameraPose>, shot_index: usize, start: usize) -> Self {
        let end = start + states.len();
        Self {
            states,
            cameras,
            shot_index,
            frame_range: (start, end),
        }
    }

    /// Shot seen by a static level camera looking along +Z.
    pub fn with_canonical_camera(states: Vec<BodyState>, shot_index: usize, start: usize) -> Self {
        let cam = CameraPose::new(canonical_camera_rotation(), Vector3::zeros());
        let cameras = vec![cam; states.len()];
        Self::new(states, cameras, shot_index, start)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StitchedMotion {
    pub states: Vec<BodyState>,
    /// Accumulated offset applied at each transition.
    pub applied_offsets: Vec<RotationMatrix>,
    /// Source shot of every frame.
    pub provenance: Vec<usize>,
    /// Cameras carried into the stitched frame.
    pub cameras: Vec<CameraPose>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignConfig {
    pub half_window: usize,
    /// Compensate the body's own spin between the last frame before a cut
    /// and the first frame after it.
    pub extrapolate_spin: bool,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            half_window: 5,
            extrapolate_spin: false,
        }
    }
}

fn pure_yaw(m: &nalgebra::Matrix3<f64>) -> RotationMatrix {
    RotationMatrix::about_y(yaw_angle(&RotationMatrix(*m)))
}

/// Heading offset that maps the head shot's frame into the tail shot's frame.
///
/// `rel.r_delta` takes the tail's last camera to the head's first camera. The
/// body keypoints at those two frames differ by the body's own rotation over
/// one frame, which is extrapolated from the tail when `extrapolate_spin`
/// is set. With static canonical cameras and no spin this is the yaw of
/// `rel.r_delta`.
pub fn orientation_offset(tail: &ShotMotion, head: &ShotMotion, rel: &RelativePose, extrapolate_spin: bool) -> RotationMatrix {
    let canon = canonical_camera_rotation();
    let r_a = tail.cameras.last().map_or(canon, |c| c.r);
    let r_b = head.cameras.first().map_or(canon, |c| c.r);
    let n = tail.states.len();
    let spin = if extrapolate_spin && n >= 2 {
        tail.states[n - 1].root_rotation().0 * tail.states[n - 2].root_rotation().0.transpose()
    } else {
        nalgebra::Matrix3::identity()
    };
    pure_yaw(&(spin * r_a.0.transpose() * rel.r_delta.0.transpose() * r_b.0))
}

/// Rotates a shot about `pivot`: root orientations are left-multiplied by
/// `offset` and translations become `offset * (t - pivot) + pivot`. Cameras
/// follow so that projections are unchanged.
pub fn apply_offset(shot: &ShotMotion, offset: &RotationMatrix, pivot: &Vector3<f64>) -> ShotMotion {
    let o = offset.0;
    let mut out = shot.clone();
    for s in &mut out.states {
        s.root_orient = AxisAngle(log_so3(&nearest_rotation(&(o * s.root_rotation().0))));
        s.translation = o * (s.translation - pivot) + pivot;
    }
    for c in &mut out.cameras {
        let r = c.r.0 * o.transpose();
        c.t += c.r.0 * pivot - r * pivot;
        c.r = RotationMatrix(r);
    }
    out
}

fn translate(shot: &mut ShotMotion, shift: &Vector3<f64>) {
    for s in &mut shot.states {
        s.translation += shift;
    }
    for c in &mut shot.cameras {
        c.t -= c.r.0 * shift;
    }
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Cross-fades every joint rotation around the cut at `transition` (first
/// frame of the new shot). The excess rotation across the cut, relative to the
/// delta predicted from the two per-frame deltas on each side (exact when the
/// deltas vary quadratically), is spread with a smoothstep over
/// frames `transition - half_window - 1 ..= transition + half_window`; frames
/// outside that window are returned untouched. The window is clamped at the
/// sequence ends.
pub fn smooth_boundary(states: &[BodyState], transition: usize, half_window: usize) -> Vec<BodyState> {
    let mut out = states.to_vec();
    let n = states.len();
    if transition == 0 || transition >= n || half_window == 0 {
        return out;
    }
    let t = transition;
    let lo = t as isize - half_window as isize - 1;
    let span = (2 * half_window + 1) as f64;
    let first = lo.max(0) as usize;
    let last = (t + half_window).min(n - 1);

    for j in 0..=BODY_JOINTS {
        let rot = |f: usize| states[f].node_rotation(j).0;
        let delta = |a: usize, b: usize| log_so3(&(rot(b) * rot(a).transpose()));
        let before = if t >= 2 { delta(t - 2, t - 1) } else { Vector3::zeros() };
        let after = if t + 1 < n { delta(t, t + 1) } else { Vector3::zeros() };
        let predicted = if t >= 3 && t + 2 < n {
            (4.0 * (before + after) - delta(t - 3, t - 2) - delta(t + 1, t + 2)) / 6.0
        } else {
            0.5 * (before + after)
        };
        let expected = exp_so3(&predicted);
        let excess = log_so3(&(rot(t) * rot(t - 1).transpose() * expected.transpose()));
        if excess.norm() == 0.0 {
            continue;
        }
        for (f, state) in out.iter_mut().enumerate().take(last + 1).skip(first) {
            let s = smoothstep((f as isize - lo) as f64 / span);
            let k = if f < t { s } else { s - 1.0 };
            state.set_node_rotation(j, &nearest_rotation(&(exp_so3(&(excess * k)) * rot(f))));
        }
    }
    out
}

fn validate(shots: &[ShotMotion], rels: usize) -> Result<(), AlignError> {
    if rels + 1 != shots.len() && !(shots.is_empty() && rels == 0) {
        return Err(AlignError::CountMismatch { shots: shots.len(), rels });
    }
    for (i, s) in shots.iter().enumerate() {
        if s.states.len() != s.cameras.len() || s.frame_range.1 < s.frame_range.0 || s.frame_range.1 - s.frame_range.0 != s.states.len() {
            return Err(AlignError::Malformed(i));
        }
        if i > 0 && s.frame_range.0 != shots[i - 1].frame_range.1 {
            return Err(AlignError::NonContiguous {
                shot: i,
                start: s.frame_range.0,
                expected: shots[i - 1].frame_range.1,
            });
        }
    }
    Ok(())
}

fn step_velocity(states: &[BodyState], from_end: bool) -> Vector3<f64> {
    let n = states.len();
    if n < 2 {
        return Vector3::zeros();
    }
    if from_end {
        states[n - 1].translation - states[n - 2].translation
    } else {
        states[1].translation - states[0].translation
    }
}

/// Shifts `head` so its first translation continues `prev` at the mean of the
/// two shots' boundary velocities.
fn continue_translation(prev: &[BodyState], head: &mut ShotMotion) {
    let (Some(last), Some(first)) = (prev.last(), head.states.first()) else {
        return;
    };
    let v = 0.5 * (step_velocity(prev, true) + step_velocity(&head.states, false));
    let shift = last.translation + v - first.translation;
    translate(head, &shift);
}

fn concatenate(shots: Vec<ShotMotion>, offsets: Vec<RotationMatrix>) -> StitchedMotion {
    let mut out = StitchedMotion {
        states: Vec::new(),
        applied_offsets: offsets,
        provenance: Vec::new(),
        cameras: Vec::new(),
    };
    for (k, s) in shots.into_iter().enumerate() {
        out.provenance.extend(std::iter::repeat_n(k, s.states.len()));
        out.states.extend(s.states);
        out.cameras.extend(s.cameras);
    }
    out
}

/// Aligns every shot to the frame of the first one and smooths the cuts.
pub fn stitch(shots: &[ShotMotion], rels: &[RelativePose], cfg: &AlignConfig) -> Result<StitchedMotion, AlignError> {
    validate(shots, rels.len())?;
    let mut aligned: Vec<ShotMotion> = Vec::with_capacity(shots.len());
    let mut offsets = Vec::with_capacity(rels.len());
    let mut accumulated = RotationMatrix::identity();
    for (k, shot) in shots.iter().enumerate() {
        if k == 0 {
            aligned.push(shot.clone());
            continue;
        }
        let local = orientation_offset(&shots[k - 1], shot, &rels[k - 1], cfg.extrapolate_spin);
        accumulated = RotationMatrix(nearest_rotation(&(accumulated.0 * local.0)));
        offsets.push(accumulated);
        let pivot = shot.states.first().map_or(Vector3::zeros(), |s| s.translation);
        let mut moved = apply_offset(shot, &accumulated, &pivot);
        continue_translation(&aligned[k - 1].states, &mut moved);
        aligned.push(moved);
    }
    let transitions: Vec<usize> = aligned.iter().skip(1).map(|s| s.frame_range.0 - shots[0].frame_range.0).collect();
    let mut out = concatenate(aligned, offsets);
    for t in transitions {
        out.states = smooth_boundary(&out.states, t, cfg.half_window);
    }
    Ok(out)
}

/// Baseline without orientation alignment: shots are only translated for
/// continuity and concatenated.
pub fn concatenate_naive(shots: &[ShotMotion]) -> Result<StitchedMotion, AlignError> {
    validate(shots, shots.len().saturating_sub(1))?;
    let mut moved: Vec<ShotMotion> = Vec::with_capacity(shots.len());
    for (k, shot) in shots.iter().enumerate() {
        let mut s = shot.clone();
        if k > 0 {
            continue_translation(&moved[k - 1].states, &mut s);
        }
        moved.push(s);
    }
    let n = shots.len().saturating_sub(1);
    Ok(concatenate(moved, vec![RotationMatrix::identity(); n]))
}

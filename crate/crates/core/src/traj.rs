//! Stick-skeleton forward kinematics, rule-based foot contacts and
//! contact-anchored root trajectory refinement.

use nalgebra::{Matrix3, Vector3};

use crate::align::{BodyState, StitchedMotion};

pub const JOINT_COUNT: usize = 24;

/// Parent of each node in the kinematic tree; the root has none.
pub const PARENTS: [Option<usize>; JOINT_COUNT] = {
    const P: [i32; JOINT_COUNT] = [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21];
    let mut out = [None; JOINT_COUNT];
    let mut i = 0;
    while i < JOINT_COUNT {
        if P[i] >= 0 {
            out[i] = Some(P[i] as usize);
        }
        i += 1;
    }
    out
};

pub const JOINT_NAMES: [&str; JOINT_COUNT] = [
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee", "spine2", "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot", "neck", "left_collar",
    "right_collar", "head", "left_shoulder", "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist", "left_hand", "right_hand",
];

pub const LEFT_HIP: usize = 1;
pub const RIGHT_HIP: usize = 2;
pub const LEFT_KNEE: usize = 4;
pub const RIGHT_KNEE: usize = 5;
pub const LEFT_ANKLE: usize = 7;
pub const RIGHT_ANKLE: usize = 8;
pub const LEFT_TOE: usize = 10;
pub const RIGHT_TOE: usize = 11;

/// Bone offsets from each node's parent in the rest pose (meters). The body
/// faces +Z with its left side toward +X.
pub const REST_OFFSETS: [[f64; 3]; JOINT_COUNT] = [
    [0.0, 0.0, 0.0],
    [0.06, -0.09, 0.0],
    [-0.06, -0.09, 0.0],
    [0.0, 0.11, -0.01],
    [0.04, -0.38, 0.0],
    [-0.04, -0.38, 0.0],
    [0.0, 0.13, 0.0],
    [-0.01, -0.40, -0.04],
    [0.01, -0.40, -0.04],
    [0.0, 0.05, 0.02],
    [0.04, -0.06, 0.12],
    [-0.04, -0.06, 0.12],
    [0.0, 0.21, -0.03],
    [0.07, 0.11, -0.01],
    [-0.07, 0.11, -0.01],
    [0.0, 0.09, 0.05],
    [0.12, 0.04, -0.01],
    [-0.12, 0.04, -0.01],
    [0.26, 0.0, -0.02],
    [-0.26, 0.0, -0.02],
    [0.25, 0.01, 0.0],
    [-0.25, 0.01, 0.0],
    [0.08, -0.01, -0.01],
    [-0.08, -0.01, -0.01],
];

pub fn rest_offset(j: usize) -> Vector3<f64> {
    Vector3::from(REST_OFFSETS[j])
}

/// World-space joint positions for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonFrame {
    pub joints: Vec<Vector3<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Foot {
    Left,
    Right,
}

impl Foot {
    pub const BOTH: [Foot; 2] = [Foot::Left, Foot::Right];

    pub fn ankle(self) -> usize {
        match self {
            Foot::Left => LEFT_ANKLE,
            Foot::Right => RIGHT_ANKLE,
        }
    }

    pub fn toe(self) -> usize {
        match self {
            Foot::Left => LEFT_TOE,
            Foot::Right => RIGHT_TOE,
        }
    }
}

/// Binary contacts per foot and root velocity, one entry per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactState {
    pub left: Vec<bool>,
    pub right: Vec<bool>,
    /// Meters per second.
    pub root_velocity: Vec<Vector3<f64>>,
}

impl ContactState {
    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }

    pub fn foot(&self, foot: Foot) -> &[bool] {
        match foot {
            Foot::Left => &self.left,
            Foot::Right => &self.right,
        }
    }

    /// Fraction of per-foot per-frame labels that agree with `other`.
    pub fn agreement(&self, other: &ContactState) -> f64 {
        let n = self.len().min(other.len());
        if n == 0 {
            return 1.0;
        }
        let same = (0..n).map(|t| usize::from(self.left[t] == other.left[t]) + usize::from(self.right[t] == other.right[t])).sum::<usize>();
        same as f64 / (2 * n) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactConfig {
    /// Ankle height above the estimated ground below which a foot may touch.
    pub height_thresh_m: f64,
    pub vel_thresh_mps: f64,
}

impl Default for ContactConfig {
    fn default() -> Self {
        Self {
            height_thresh_m: 0.08,
            vel_thresh_mps: 0.25,
        }
    }
}

/// Positions of all 24 nodes: the root sits at the translation with the root
/// orientation, every other node at its parent plus the parent's global
/// rotation applied to its rest offset.
pub fn forward_kinematics(state: &BodyState) -> SkeletonFrame {
    let mut global = [Matrix3::identity(); JOINT_COUNT];
    let mut joints = vec![Vector3::zeros(); JOINT_COUNT];
    for j in 0..JOINT_COUNT {
        let local = state.node_rotation(j).0;
        match PARENTS[j] {
            None => {
                global[j] = local;
                joints[j] = state.translation;
            }
            Some(p) => {
                global[j] = global[p] * local;
                joints[j] = joints[p] + global[p] * rest_offset(j);
            }
        }
    }
    SkeletonFrame { joints }
}

pub fn skeleton_sequence(states: &[BodyState]) -> Vec<SkeletonFrame> {
    states.iter().map(forward_kinematics).collect()
}

/// Value at fraction `q` of the sorted sample (nearest-rank, rounding down).
fn percentile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    values[((values.len() - 1) as f64 * q).floor() as usize]
}

/// Ankle heights of both feet over all frames; the ground is taken at the
/// 5th percentile.
pub fn estimate_ground(frames: &[SkeletonFrame]) -> f64 {
    let mut heights: Vec<f64> = frames.iter().flat_map(|f| [f.joints[LEFT_ANKLE].y, f.joints[RIGHT_ANKLE].y]).collect();
    if heights.is_empty() {
        return 0.0;
    }
    percentile(&mut heights, 0.05)
}

/// A foot is in contact when its ankle is within `height_thresh_m` of the
/// ground and its speed is under `vel_thresh_mps`. Speed is the smaller of
/// the backward and forward one-frame differences, so a foot that plants or
/// lifts at frame t still counts as still at t.
pub fn detect_contacts(frames: &[SkeletonFrame], fps: f64, cfg: &ContactConfig) -> ContactState {
    let n = frames.len();
    let ground = estimate_ground(frames);
    let label = |foot: Foot| -> Vec<bool> {
        let a = foot.ankle();
        (0..n)
            .map(|t| {
                let p = frames[t].joints[a];
                let back = (t > 0).then(|| (p - frames[t - 1].joints[a]).norm());
                let fwd = (t + 1 < n).then(|| (frames[t + 1].joints[a] - p).norm());
                let step = match (back, fwd) {
                    (Some(b), Some(f)) => b.min(f),
                    (Some(x), None) | (None, Some(x)) => x,
                    (None, None) => 0.0,
                };
                p.y - ground < cfg.height_thresh_m && step * fps < cfg.vel_thresh_mps
            })
            .collect()
    };
    ContactState {
        left: label(Foot::Left),
        right: label(Foot::Right),
        root_velocity: root_velocity(frames, fps),
    }
}

/// Central difference of the root position (one-sided at the ends).
pub fn root_velocity(frames: &[SkeletonFrame], fps: f64) -> Vec<Vector3<f64>> {
    let n = frames.len();
    (0..n)
        .map(|t| {
            if n < 2 {
                return Vector3::zeros();
            }
            let (a, b) = (t.saturating_sub(1), (t + 1).min(n - 1));
            (frames[b].joints[0] - frames[a].joints[0]) * fps / (b - a) as f64
        })
        .collect()
}

/// Horizontal reference point of a foot: midpoint of ankle and toe.
pub fn foot_point(frame: &SkeletonFrame, foot: Foot) -> Vector3<f64> {
    let m = 0.5 * (frame.joints[foot.ankle()] + frame.joints[foot.toe()]);
    Vector3::new(m.x, 0.0, m.z)
}

/// Maximal runs of `true` as half-open ranges.
pub fn intervals(flags: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (t, &f) in flags.iter().enumerate() {
        match (f, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                out.push((s, t));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, flags.len()));
    }
    out
}

fn hermite(p0: f64, m0: f64, p1: f64, m1: f64, len: f64, s: f64) -> f64 {
    let (s2, s3) = (s * s, s * s * s);
    (2.0 * s3 - 3.0 * s2 + 1.0) * p0 + (s3 - 2.0 * s2 + s) * len * m0 + (-2.0 * s3 + 3.0 * s2) * p1 + (s3 - s2) * len * m1
}

/// Holds every contacting foot still by shifting the root translation: over
/// each pair of frames in which a foot stays in contact, the root takes back
/// that foot's horizontal displacement (the mean of both feet in double
/// support). The shift is accumulated, so the handoff between feet stays
/// continuous. Between contacts it follows a cubic Hermite curve matching
/// value and slope at both ends, and it is held constant before the first and
/// after the last contact. Rotations are left untouched.
pub fn refine_trajectory(motion: &StitchedMotion, contacts: &ContactState) -> StitchedMotion {
    let n = motion.states.len().min(contacts.len());
    let skel = skeleton_sequence(&motion.states[..n]);

    let mut pinned: Vec<Option<Vector3<f64>>> = vec![None; n];
    let mut shift = Vector3::zeros();
    for t in 0..n {
        if t > 0 {
            let planted: Vec<Foot> = Foot::BOTH.into_iter().filter(|&f| contacts.foot(f)[t - 1] && contacts.foot(f)[t]).collect();
            if !planted.is_empty() {
                let slide = planted.iter().map(|&f| foot_point(&skel[t], f) - foot_point(&skel[t - 1], f)).sum::<Vector3<f64>>() / planted.len() as f64;
                shift -= slide;
            }
        }
        if contacts.left[t] || contacts.right[t] {
            pinned[t] = Some(shift);
        }
    }
    let shift = fill_gaps(&pinned);

    let mut out = motion.clone();
    for (s, d) in out.states.iter_mut().zip(shift) {
        s.translation += d;
    }
    out
}

/// Fills `None` runs between known values with C1 Hermite segments, holding
/// the nearest value at the ends. All zeros when nothing is known.
fn fill_gaps(known: &[Option<Vector3<f64>>]) -> Vec<Vector3<f64>> {
    let n = known.len();
    let idx: Vec<usize> = (0..n).filter(|&t| known[t].is_some()).collect();
    let Some((&first, &last)) = idx.first().zip(idx.last()) else {
        return vec![Vector3::zeros(); n];
    };
    let val = |t: usize| known[t].expect("known");
    // slope at a known frame from its known neighbours, zero at run edges
    let slope = |t: usize, dir: isize| -> Vector3<f64> {
        let o = t as isize - dir;
        if o >= 0 && (o as usize) < n && known[o as usize].is_some() {
            (val(t) - val(o as usize)) * dir as f64
        } else {
            Vector3::zeros()
        }
    };
    let mut out = vec![Vector3::zeros(); n];
    for t in 0..n {
        out[t] = match known[t] {
            Some(v) => v,
            None if t < first => val(first),
            None if t > last => val(last),
            None => {
                let a = idx[idx.partition_point(|&i| i < t) - 1];
                let b = idx[idx.partition_point(|&i| i < t)];
                let (va, vb) = (val(a), val(b));
                let (ma, mb) = (slope(a, 1), slope(b, -1));
                let len = (b - a) as f64;
                let s = (t - a) as f64 / len;
                Vector3::from_fn(|i, _| hermite(va[i], ma[i], vb[i], mb[i], len, s))
            }
        };
    }
    out
}

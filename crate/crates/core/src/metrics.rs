//! Pose, trajectory and camera evaluation metrics.
//!
//! Units: MPJPE variants in millimeters, RTE and ATE in meters, angles in
//! degrees, foot sliding in centimeters, jitter in units of 10 m per frame
//! cubed times fps cubed.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::align::BodyState;
use crate::geom::{geodesic_distance, yaw_angle, CameraPose, RotationMatrix};
use crate::traj::{skeleton_sequence, ContactState, Foot, SkeletonFrame};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("sequence lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} samples, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("point set is degenerate (rank < 2)")]
    Degenerate,
}

/// `x -> scale * rotation * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * x) + self.translation
    }

    /// Applies the transform to the world frame of a world-to-camera pose.
    pub fn apply_to_camera(&self, pose: &CameraPose) -> CameraPose {
        let r = pose.r.0 * self.rotation.transpose();
        let c = self.apply(&pose.center());
        CameraPose::new(RotationMatrix(r), -(r * c))
    }
}

fn centroid(points: &[Vector3<f64>]) -> Vector3<f64> {
    points.iter().sum::<Vector3<f64>>() / points.len() as f64
}

/// Closed-form least-squares alignment of `a` onto `b`. Returns `None` when
/// `a` spans fewer than two dimensions.
fn umeyama(a: &[Vector3<f64>], b: &[Vector3<f64>], with_scale: bool) -> Option<Similarity> {
    let n = a.len() as f64;
    let (ma, mb) = (centroid(a), centroid(b));
    let mut cov = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    let mut var_a = 0.0;
    for (p, q) in a.iter().zip(b) {
        let (da, db) = (p - ma, q - mb);
        cov += db * da.transpose();
        spread += da * da.transpose();
        var_a += da.norm_squared();
    }
    cov /= n;
    var_a /= n;
    let mut ev: Vec<f64> = spread.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    if ev[0].is_nan() || ev[0] <= 0.0 || ev[1] <= 1e-12 * ev[0] {
        return None;
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let d = svd.singular_values;
    let smallest = (0..3).min_by(|&i, &j| d[i].total_cmp(&d[j])).expect("3 values");
    let mut s = Vector3::new(1.0, 1.0, 1.0);
    if u.determinant() * v_t.determinant() < 0.0 {
        s[smallest] = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&s) * v_t;
    let scale = if with_scale { d.dot(&s) / var_a } else { 1.0 };
    Some(Similarity {
        scale,
        rotation,
        translation: mb - scale * rotation * ma,
    })
}

fn check_pair(a: usize, b: usize, need: usize) -> Result<(), MetricsError> {
    if a != b {
        return Err(MetricsError::LengthMismatch(a, b));
    }
    if a < need {
        return Err(MetricsError::TooShort { need, got: a });
    }
    Ok(())
}

/// Similarity minimizing `sum |s R a_i + t - b_i|^2`.
pub fn procrustes_align(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Result<Similarity, MetricsError> {
    check_pair(a.len(), b.len(), 3)?;
    umeyama(a, b, true).ok_or(MetricsError::Degenerate)
}

/// Rotation and translation (scale 1) minimizing `sum |R a_i + t - b_i|^2`.
pub fn rigid_align(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Result<Similarity, MetricsError> {
    check_pair(a.len(), b.len(), 3)?;
    umeyama(a, b, false).ok_or(MetricsError::Degenerate)
}

/// Alignment that degrades to a pure translation for degenerate inputs.
fn align_or_translate(a: &[Vector3<f64>], b: &[Vector3<f64>], with_scale: bool) -> Similarity {
    if a.len() >= 3 {
        if let Some(s) = umeyama(a, b, with_scale) {
            return s;
        }
    }
    if a.is_empty() {
        return Similarity::identity();
    }
    Similarity {
        translation: centroid(b) - centroid(a),
        ..Similarity::identity()
    }
}

/// Sum of squared residuals of `a` mapped by `sim` onto `b`.
pub fn alignment_residual(sim: &Similarity, a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (sim.apply(p) - q).norm_squared()).sum()
}

/// Predicted and ground-truth motion over the same frames.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionPair {
    pub predicted: Vec<BodyState>,
    pub truth: Vec<BodyState>,
    pub predicted_joints: Vec<SkeletonFrame>,
    pub truth_joints: Vec<SkeletonFrame>,
    pub fps: f64,
}

impl MotionPair {
    pub fn new(predicted: Vec<BodyState>, truth: Vec<BodyState>, fps: f64) -> Result<Self, MetricsError> {
        check_pair(predicted.len(), truth.len(), 1)?;
        Ok(Self {
            predicted_joints: skeleton_sequence(&predicted),
            truth_joints: skeleton_sequence(&truth),
            predicted,
            truth,
            fps,
        })
    }

    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }
}

fn mean_joint_error(pred: &[Vector3<f64>], truth: &[Vector3<f64>], sim: &Similarity) -> (f64, usize) {
    (pred.iter().zip(truth).map(|(p, q)| (sim.apply(p) - q).norm()).sum(), pred.len())
}

/// Mean joint error after a per-frame similarity alignment, in mm.
pub fn pa_mpjpe(pair: &MotionPair) -> f64 {
    let (mut sum, mut count) = (0.0, 0);
    for (p, t) in pair.predicted_joints.iter().zip(&pair.truth_joints) {
        let sim = align_or_translate(&p.joints, &t.joints, true);
        let (s, c) = mean_joint_error(&p.joints, &t.joints, &sim);
        sum += s;
        count += c;
    }
    1000.0 * sum / count.max(1) as f64
}

fn flatten(frames: &[SkeletonFrame]) -> Vec<Vector3<f64>> {
    frames.iter().flat_map(|f| f.joints.iter().copied()).collect()
}

/// Mean joint error with every `chunk`-frame segment rigidly aligned to the
/// truth on its own, in mm.
pub fn wa_mpjpe(pair: &MotionPair, chunk: usize) -> f64 {
    let chunk = chunk.max(1);
    let (mut sum, mut count) = (0.0, 0);
    for (p, t) in pair.predicted_joints.chunks(chunk).zip(pair.truth_joints.chunks(chunk)) {
        let (pa, ta) = (flatten(p), flatten(t));
        let sim = align_or_translate(&pa, &ta, false);
        let (s, c) = mean_joint_error(&pa, &ta, &sim);
        sum += s;
        count += c;
    }
    1000.0 * sum / count.max(1) as f64
}

/// Mean joint error over the whole sequence after rigidly aligning only the
/// first `chunk` frames, in mm.
pub fn w_mpjpe(pair: &MotionPair, chunk: usize) -> f64 {
    let k = chunk.max(1).min(pair.len());
    let sim = align_or_translate(&flatten(&pair.predicted_joints[..k]), &flatten(&pair.truth_joints[..k]), false);
    let (s, c) = mean_joint_error(&flatten(&pair.predicted_joints), &flatten(&pair.truth_joints), &sim);
    1000.0 * s / c.max(1) as f64
}

/// Yaw-plus-translation transform matching the predicted first root to the
/// true one.
pub fn first_frame_alignment(pair: &MotionPair) -> Similarity {
    let (Some(p0), Some(t0)) = (pair.predicted.first(), pair.truth.first()) else {
        return Similarity::identity();
    };
    let delta = yaw_angle(&RotationMatrix(t0.root_rotation().0 * p0.root_rotation().0.transpose()));
    let rotation = RotationMatrix::about_y(delta).0;
    Similarity {
        scale: 1.0,
        rotation,
        translation: t0.translation - rotation * p0.translation,
    }
}

/// Mean root translation error after first-frame alignment, in m.
pub fn rte(pair: &MotionPair) -> f64 {
    let sim = first_frame_alignment(pair);
    let n = pair.len().max(1) as f64;
    pair.predicted.iter().zip(&pair.truth).map(|(p, t)| (sim.apply(&p.translation) - t.translation).norm()).sum::<f64>() / n
}

/// Mean root orientation error after first-frame alignment, in degrees.
pub fn roe(pair: &MotionPair) -> f64 {
    let sim = first_frame_alignment(pair);
    let n = pair.len().max(1) as f64;
    pair.predicted
        .iter()
        .zip(&pair.truth)
        .map(|(p, t)| geodesic_distance(&RotationMatrix(sim.rotation * p.root_rotation().0), &t.root_rotation()).to_degrees())
        .sum::<f64>()
        / n
}

/// Mean third-difference magnitude of all joints, times `fps^3 / 10`.
pub fn jitter(frames: &[SkeletonFrame], fps: f64) -> Result<f64, MetricsError> {
    if frames.len() < 4 {
        return Err(MetricsError::TooShort { need: 4, got: frames.len() });
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for w in frames.windows(4) {
        for j in 0..w[0].joints.len() {
            let d3 = w[3].joints[j] - 3.0 * w[2].joints[j] + 3.0 * w[1].joints[j] - w[0].joints[j];
            sum += d3.norm();
            count += 1;
        }
    }
    Ok(sum / count as f64 * fps.powi(3) / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FootSliding {
    /// Mean horizontal per-frame displacement, in cm.
    pub value: f64,
    /// Set when no foot was in contact over two consecutive frames.
    pub no_contact: bool,
}

/// Mean horizontal displacement of the ankle and toe of each foot between
/// consecutive frames in which that foot is in contact, in cm.
pub fn foot_sliding(frames: &[SkeletonFrame], contacts: &ContactState) -> FootSliding {
    let n = frames.len().min(contacts.len());
    let (mut sum, mut count) = (0.0, 0usize);
    for foot in Foot::BOTH {
        let c = contacts.foot(foot);
        for t in 1..n {
            if c[t - 1] && c[t] {
                for j in [foot.ankle(), foot.toe()] {
                    let d = frames[t].joints[j] - frames[t - 1].joints[j];
                    sum += d.x.hypot(d.z);
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return FootSliding { value: 0.0, no_contact: true };
    }
    FootSliding {
        value: 100.0 * sum / count as f64,
        no_contact: false,
    }
}

/// Similarity that best maps predicted camera centers onto the true ones.
pub fn trajectory_alignment(pred: &[CameraPose], truth: &[CameraPose]) -> Similarity {
    let a: Vec<_> = pred.iter().map(CameraPose::center).collect();
    let b: Vec<_> = truth.iter().map(CameraPose::center).collect();
    align_or_translate(&a, &b, true)
}

/// Root-mean-square camera center error after similarity alignment, in m.
pub fn ate(pred: &[CameraPose], truth: &[CameraPose]) -> Result<f64, MetricsError> {
    check_pair(pred.len(), truth.len(), 2)?;
    let sim = trajectory_alignment(pred, truth);
    let sq: f64 = pred.iter().zip(truth).map(|(p, t)| (sim.apply(&p.center()) - t.center()).norm_squared()).sum();
    Ok((sq / pred.len() as f64).sqrt())
}

/// Relative pose error over frame pairs `(t, t + delta)` after similarity
/// alignment: mean translation error in m and mean rotation error in degrees
/// of the camera-to-world relative motions.
pub fn rpe(pred: &[CameraPose], truth: &[CameraPose], delta: usize) -> Result<(f64, f64), MetricsError> {
    check_pair(pred.len(), truth.len(), 2)?;
    let delta = delta.max(1);
    if delta >= pred.len() {
        return Err(MetricsError::TooShort { need: delta + 1, got: pred.len() });
    }
    let sim = trajectory_alignment(pred, truth);
    let aligned: Vec<CameraPose> = pred.iter().map(|p| sim.apply_to_camera(p)).collect();
    let relative = |poses: &[CameraPose], t: usize| {
        let (a, b) = (&poses[t], &poses[t + delta]);
        (a.r.0 * b.r.0.transpose(), a.r.0 * (b.center() - a.center()))
    };
    let pairs = pred.len() - delta;
    let (mut trans, mut rot) = (0.0, 0.0);
    for t in 0..pairs {
        let (rp, tp) = relative(&aligned, t);
        let (rt, tt) = relative(truth, t);
        trans += (tp - tt).norm();
        rot += geodesic_distance(&RotationMatrix(rp), &RotationMatrix(rt)).to_degrees();
    }
    Ok((trans / pairs as f64, rot / pairs as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsConfig {
    pub wa_chunk: usize,
    pub rpe_delta: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { wa_chunk: 100, rpe_delta: 1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub pa_mpjpe: f64,
    pub wa_mpjpe: f64,
    pub w_mpjpe: f64,
    pub rte: f64,
    pub roe: f64,
    pub jitter: f64,
    pub foot_sliding: f64,
    pub ate: Option<f64>,
    pub rpe_trans: Option<f64>,
    pub rpe_rot: Option<f64>,
}

impl MetricsReport {
    /// `(name, value, unit)` rows in a fixed order; camera metrics only when
    /// present.
    pub fn records(&self) -> Vec<(&'static str, f64, &'static str)> {
        let mut out = vec![
            ("pa_mpjpe", self.pa_mpjpe, "mm"),
            ("wa_mpjpe", self.wa_mpjpe, "mm"),
            ("w_mpjpe", self.w_mpjpe, "mm"),
            ("rte", self.rte, "m"),
            ("roe", self.roe, "deg"),
            ("jitter", self.jitter, "10m/fps^3"),
            ("foot_sliding", self.foot_sliding, "cm"),
        ];
        for (name, v, unit) in [("ate", self.ate, "m"), ("rpe_trans", self.rpe_trans, "m"), ("rpe_rot", self.rpe_rot, "deg")] {
            if let Some(v) = v {
                out.push((name, v, unit));
            }
        }
        out
    }
}

/// Full motion report; camera metrics are filled when both camera tracks are
/// given. Foot sliding uses `contacts` on the predicted motion.
pub fn evaluate(pair: &MotionPair, contacts: &ContactState, cameras: Option<(&[CameraPose], &[CameraPose])>, cfg: &MetricsConfig) -> Result<MetricsReport, MetricsError> {
    let (ate_v, rpe_v) = match cameras {
        Some((p, t)) => (Some(ate(p, t)?), Some(rpe(p, t, cfg.rpe_delta)?)),
        None => (None, None),
    };
    Ok(MetricsReport {
        pa_mpjpe: pa_mpjpe(pair),
        wa_mpjpe: wa_mpjpe(pair, cfg.wa_chunk),
        w_mpjpe: w_mpjpe(pair, cfg.wa_chunk),
        rte: rte(pair),
        roe: roe(pair),
        jitter: if pair.len() >= 4 { jitter(&pair.predicted_joints, pair.fps)? } else { 0.0 },
        foot_sliding: foot_sliding(&pair.predicted_joints, contacts).value,
        ate: ate_v,
        rpe_trans: rpe_v.map(|r| r.0),
        rpe_rot: rpe_v.map(|r| r.1),
    })
}

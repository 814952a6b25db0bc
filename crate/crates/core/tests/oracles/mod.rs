//! Naive reference implementations used to cross-check the library.
//!
//! Alignment uses Horn's closed-form unit quaternion solution instead of an
//! SVD, and angles are measured on quaternions, so nothing here shares a code
//! path with the crate under test beyond forward kinematics.
#![allow(dead_code)]

use nalgebra::{Matrix3, Matrix4, Quaternion, UnitQuaternion, Vector3};

use motionstitch::align::BodyState;
use motionstitch::geom::CameraPose;
use motionstitch::traj::{ContactState, SkeletonFrame, LEFT_ANKLE, LEFT_TOE, RIGHT_ANKLE, RIGHT_TOE};

pub struct Sim {
    pub s: f64,
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
}

impl Sim {
    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.s * (self.r * x) + self.t
    }
}

fn mean(v: &[Vector3<f64>]) -> Vector3<f64> {
    let mut m = Vector3::zeros();
    for x in v {
        m += x;
    }
    m / v.len() as f64
}

/// Horn (1987): the optimal rotation is the eigenvector of the largest
/// eigenvalue of the 4x4 matrix built from the cross-covariance.
pub fn horn(a: &[Vector3<f64>], b: &[Vector3<f64>], with_scale: bool) -> Sim {
    let (ma, mb) = (mean(a), mean(b));
    let mut m = Matrix3::zeros();
    let mut saa = 0.0;
    for (p, q) in a.iter().zip(b) {
        let (x, y) = (p - ma, q - mb);
        m += x * y.transpose();
        saa += x.norm_squared();
    }
    let (sxx, sxy, sxz) = (m[(0, 0)], m[(0, 1)], m[(0, 2)]);
    let (syx, syy, syz) = (m[(1, 0)], m[(1, 1)], m[(1, 2)]);
    let (szx, szy, szz) = (m[(2, 0)], m[(2, 1)], m[(2, 2)]);
    #[rustfmt::skip]
    let n = Matrix4::new(
        sxx + syy + szz, syz - szy,       szx - sxz,        sxy - syx,
        syz - szy,       sxx - syy - szz, sxy + syx,        szx + sxz,
        szx - sxz,       sxy + syx,       -sxx + syy - szz, syz + szy,
        sxy - syx,       szx + sxz,       syz + szy,        -sxx - syy + szz,
    );
    let eig = n.symmetric_eigen();
    let i = (0..4).max_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j])).unwrap();
    let v = eig.eigenvectors.column(i);
    let q = UnitQuaternion::from_quaternion(Quaternion::new(v[0], v[1], v[2], v[3]));
    let r = q.to_rotation_matrix().into_inner();
    let s = if with_scale {
        a.iter().zip(b).map(|(p, q)| (q - mb).dot(&(r * (p - ma)))).sum::<f64>() / saa
    } else {
        1.0
    };
    Sim { s, r, t: mb - s * r * ma }
}

/// Angle between two rotations, via quaternions.
pub fn angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let qa = UnitQuaternion::from_matrix(a);
    let qb = UnitQuaternion::from_matrix(b);
    let d = qa.inverse() * qb;
    2.0 * d.imag().norm().atan2(d.w.abs())
}

fn rot(s: &BodyState) -> Matrix3<f64> {
    UnitQuaternion::from_scaled_axis(s.root_orient.0).to_rotation_matrix().into_inner()
}

fn mean_err(p: &[Vector3<f64>], t: &[Vector3<f64>], sim: &Sim) -> f64 {
    p.iter().zip(t).map(|(a, b)| (sim.apply(a) - b).norm()).sum::<f64>() / p.len() as f64
}

pub fn pa_mpjpe(pred: &[SkeletonFrame], truth: &[SkeletonFrame]) -> f64 {
    let per_frame: Vec<f64> = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| mean_err(&p.joints, &t.joints, &horn(&p.joints, &t.joints, true)))
        .collect();
    1000.0 * per_frame.iter().sum::<f64>() / per_frame.len() as f64
}

fn stack(frames: &[SkeletonFrame]) -> Vec<Vector3<f64>> {
    let mut out = Vec::new();
    for f in frames {
        out.extend_from_slice(&f.joints);
    }
    out
}

pub fn wa_mpjpe(pred: &[SkeletonFrame], truth: &[SkeletonFrame], chunk: usize) -> f64 {
    let (mut sum, mut count) = (0.0, 0.0);
    let mut start = 0;
    while start < pred.len() {
        let end = (start + chunk).min(pred.len());
        let (p, t) = (stack(&pred[start..end]), stack(&truth[start..end]));
        sum += mean_err(&p, &t, &horn(&p, &t, false)) * p.len() as f64;
        count += p.len() as f64;
        start = end;
    }
    1000.0 * sum / count
}

pub fn w_mpjpe(pred: &[SkeletonFrame], truth: &[SkeletonFrame], chunk: usize) -> f64 {
    let k = chunk.min(pred.len());
    let sim = horn(&stack(&pred[..k]), &stack(&truth[..k]), false);
    1000.0 * mean_err(&stack(pred), &stack(truth), &sim)
}

/// Heading difference of the first frames, measured on the forward axis.
fn first_yaw(pred: &[BodyState], truth: &[BodyState]) -> Sim {
    let m = rot(&truth[0]) * rot(&pred[0]).transpose();
    // best yaw maximizes cos(a)(m00 + m22) + sin(a)(m02 - m20)
    let a = (m[(0, 2)] - m[(2, 0)]).atan2(m[(0, 0)] + m[(2, 2)]);
    let r = *nalgebra::Rotation3::from_axis_angle(&Vector3::y_axis(), a).matrix();
    Sim {
        s: 1.0,
        r,
        t: truth[0].translation - r * pred[0].translation,
    }
}

pub fn rte(pred: &[BodyState], truth: &[BodyState]) -> f64 {
    let sim = first_yaw(pred, truth);
    pred.iter().zip(truth).map(|(p, t)| (sim.apply(&p.translation) - t.translation).norm()).sum::<f64>() / pred.len() as f64
}

pub fn roe(pred: &[BodyState], truth: &[BodyState]) -> f64 {
    let sim = first_yaw(pred, truth);
    pred.iter().zip(truth).map(|(p, t)| angle_between(&(sim.r * rot(p)), &rot(t)).to_degrees()).sum::<f64>() / pred.len() as f64
}

pub fn jitter(frames: &[SkeletonFrame], fps: f64) -> f64 {
    let mut vals = Vec::new();
    for t in 3..frames.len() {
        for j in 0..frames[t].joints.len() {
            let x = |k: usize| frames[t - k].joints[j];
            let v1: Vec<Vector3<f64>> = (0..4).map(|k| x(3 - k)).collect();
            let d1: Vec<Vector3<f64>> = v1.windows(2).map(|w| w[1] - w[0]).collect();
            let d2: Vec<Vector3<f64>> = d1.windows(2).map(|w| w[1] - w[0]).collect();
            vals.push((d2[1] - d2[0]).norm());
        }
    }
    vals.iter().sum::<f64>() / vals.len() as f64 * fps * fps * fps / 10.0
}

pub fn foot_sliding(frames: &[SkeletonFrame], contacts: &ContactState) -> f64 {
    let mut d = Vec::new();
    for (flags, joints) in [(&contacts.left, [LEFT_ANKLE, LEFT_TOE]), (&contacts.right, [RIGHT_ANKLE, RIGHT_TOE])] {
        for t in 1..frames.len() {
            if flags[t] && flags[t - 1] {
                for j in joints {
                    let v = frames[t].joints[j] - frames[t - 1].joints[j];
                    d.push((v.x * v.x + v.z * v.z).sqrt());
                }
            }
        }
    }
    if d.is_empty() {
        0.0
    } else {
        100.0 * d.iter().sum::<f64>() / d.len() as f64
    }
}

/// Camera-to-world as a homogeneous matrix.
fn c2w(p: &CameraPose) -> Matrix4<f64> {
    let rt = p.r.0.transpose();
    let c = -(rt * p.t);
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&c);
    m
}

fn centers(poses: &[CameraPose]) -> Vec<Vector3<f64>> {
    poses.iter().map(|p| c2w(p).fixed_view::<3, 1>(0, 3).into_owned()).collect()
}

pub fn ate(pred: &[CameraPose], truth: &[CameraPose]) -> f64 {
    let (a, b) = (centers(pred), centers(truth));
    let sim = horn(&a, &b, true);
    (a.iter().zip(&b).map(|(p, q)| (sim.apply(p) - q).norm_squared()).sum::<f64>() / a.len() as f64).sqrt()
}

pub fn rpe(pred: &[CameraPose], truth: &[CameraPose], delta: usize) -> (f64, f64) {
    let sim = horn(&centers(pred), &centers(truth), true);
    let mut g = Matrix4::identity();
    g.fixed_view_mut::<3, 3>(0, 0).copy_from(&sim.r);
    g.fixed_view_mut::<3, 1>(0, 3).copy_from(&sim.t);
    // scale acts on positions only
    let aligned: Vec<Matrix4<f64>> = pred
        .iter()
        .map(|p| {
            let mut m = c2w(p);
            let c = m.fixed_view::<3, 1>(0, 3) * sim.s;
            m.fixed_view_mut::<3, 1>(0, 3).copy_from(&c);
            g * m
        })
        .collect();
    let truth: Vec<Matrix4<f64>> = truth.iter().map(c2w).collect();
    let (mut et, mut er) = (0.0, 0.0);
    let pairs = pred.len() - delta;
    for i in 0..pairs {
        let rel = |m: &[Matrix4<f64>]| m[i].try_inverse().unwrap() * m[i + delta];
        let (p, t) = (rel(&aligned), rel(&truth));
        et += (p.fixed_view::<3, 1>(0, 3) - t.fixed_view::<3, 1>(0, 3)).norm();
        er += angle_between(&p.fixed_view::<3, 3>(0, 0).into_owned(), &t.fixed_view::<3, 3>(0, 0).into_owned()).to_degrees();
    }
    (et / pairs as f64, er / pairs as f64)
}

/// `|a - b| <= tol * max(|a|, |b|)`, with a small absolute floor for values
/// that are zero up to rounding.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()) + 1e-12
}

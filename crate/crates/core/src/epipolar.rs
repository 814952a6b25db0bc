//! Two-view relative pose from index-matched keypoints.
//!
//! The fundamental matrix is solved linearly from the stacked epipolar
//! constraints (normalized eight-point algorithm), lifted to an essential
//! matrix with the shared intrinsics, and decomposed into the four candidate
//! `(R, t)` pairs; triangulated depths pick the physical one. RANSAC wraps the
//! whole chain.
//!
//! Conventions: for camera coordinates `X2 = R X1 + t`, pixel correspondences
//! satisfy `s2^T F s1 = 0` with `F = K^-T [t]x R K^-1`.

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geom::{nearest_rotation, skew, Intrinsics, RotationMatrix};

/// Condition number above which the normalized design matrix is degenerate.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EpipolarError {
    #[error("need at least 8 visible correspondences, got {0}")]
    InsufficientData(usize),
    #[error("degenerate configuration (condition number {0:.3e})")]
    Degenerate(f64),
    #[error("no pose candidate puts a majority of points in front of both cameras ({best} of {total})")]
    Cheirality { best: usize, total: usize },
    #[error("correspondence lists have different lengths")]
    LengthMismatch,
    #[error("every RANSAC iteration was degenerate")]
    AllDegenerate,
}

/// Index-matched pixel correspondences between two frames.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    pub s1: Vec<Vector2<f64>>,
    pub s2: Vec<Vector2<f64>>,
    pub visible: Vec<bool>,
}

impl CorrespondenceSet {
    pub fn new(s1: Vec<Vector2<f64>>, s2: Vec<Vector2<f64>>, visible: Vec<bool>) -> Result<Self, EpipolarError> {
        if s1.len() != s2.len() || s1.len() != visible.len() {
            return Err(EpipolarError::LengthMismatch);
        }
        Ok(Self { s1, s2, visible })
    }

    /// All pairs visible.
    pub fn all_visible(s1: Vec<Vector2<f64>>, s2: Vec<Vector2<f64>>) -> Result<Self, EpipolarError> {
        let n = s1.len();
        Self::new(s1, s2, vec![true; n])
    }

    pub fn len(&self) -> usize {
        self.s1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s1.is_empty()
    }

    pub fn visible_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.visible[i]).collect()
    }

    /// Restriction to `indices`, all marked visible.
    pub fn subset(&self, indices: &[usize]) -> CorrespondenceSet {
        CorrespondenceSet {
            s1: indices.iter().map(|&i| self.s1[i]).collect(),
            s2: indices.iter().map(|&i| self.s2[i]).collect(),
            visible: vec![true; indices.len()],
        }
    }
}

/// Rank-2 fundamental matrix with unit Frobenius norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundamentalMatrix(pub Matrix3<f64>);

/// Essential matrix projected to singular values `(1, 1, 0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssentialMatrix(pub Matrix3<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct RelativePose {
    /// Rotation taking first-camera coordinates to second-camera coordinates.
    pub r_delta: RotationMatrix,
    /// Unit translation direction (scale is unobservable).
    pub t_dir: Vector3<f64>,
    pub inlier_count: usize,
    pub inlier_mask: Vec<bool>,
}

impl RelativePose {
    pub fn identity() -> Self {
        Self {
            r_delta: RotationMatrix::identity(),
            t_dir: Vector3::new(0.0, 0.0, 1.0),
            inlier_count: 0,
            inlier_mask: Vec::new(),
        }
    }

    /// `[t]x R`, the essential matrix implied by this pose.
    pub fn essential(&self) -> Matrix3<f64> {
        skew(&self.t_dir) * self.r_delta.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    pub iterations: usize,
    pub inlier_threshold_px: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            inlier_threshold_px: 2.0,
            seed: 0,
        }
    }
}

/// Similarity moving the centroid to the origin with RMS distance sqrt(2).
fn hartley_normalization(points: &[Vector2<f64>]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let centroid = points.iter().fold(Vector2::zeros(), |acc, p| acc + p) / n;
    let rms = (points.iter().map(|p| (p - centroid).norm_squared()).sum::<f64>() / n).sqrt();
    let s = if rms > 0.0 { std::f64::consts::SQRT_2 / rms } else { 1.0 };
    Matrix3::new(s, 0.0, -s * centroid.x, 0.0, s, -s * centroid.y, 0.0, 0.0, 1.0)
}

fn apply_h(h: &Matrix3<f64>, p: &Vector2<f64>) -> Vector2<f64> {
    let q = h * Vector3::new(p.x, p.y, 1.0);
    Vector2::new(q.x / q.z, q.y / q.z)
}

/// Smallest-to-largest sorted copy of singular values with matching column order.
fn svd_sorted_desc(m: &Matrix3<f64>) -> (Matrix3<f64>, Vector3<f64>, Matrix3<f64>) {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let s = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let u_sorted = Matrix3::from_columns(&[u.column(order[0]), u.column(order[1]), u.column(order[2])]);
    let vt_sorted = Matrix3::from_rows(&[v_t.row(order[0]), v_t.row(order[1]), v_t.row(order[2])]);
    (u_sorted, Vector3::new(s[order[0]], s[order[1]], s[order[2]]), vt_sorted)
}

/// Normalized eight-point estimate of the fundamental matrix from all
/// visible correspondences.
pub fn eight_point(c: &CorrespondenceSet) -> Result<FundamentalMatrix, EpipolarError> {
    let idx = c.visible_indices();
    if idx.len() < 8 {
        return Err(EpipolarError::InsufficientData(idx.len()));
    }
    let p1: Vec<_> = idx.iter().map(|&i| c.s1[i]).collect();
    let p2: Vec<_> = idx.iter().map(|&i| c.s2[i]).collect();
    let t1 = hartley_normalization(&p1);
    let t2 = hartley_normalization(&p2);

    // Each row expands x2^T F x1 = 0 with F flattened row-major; zero rows pad
    // the system to at least 9 rows so the full right-singular basis exists.
    let rows = idx.len().max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (r, (q1, q2)) in p1.iter().zip(&p2).enumerate() {
        let (x1, y1) = {
            let q = apply_h(&t1, q1);
            (q.x, q.y)
        };
        let (x2, y2) = {
            let q = apply_h(&t2, q2);
            (q.x, q.y)
        };
        let row = [x2 * x1, x2 * y1, x2, y2 * x1, y2 * y1, y2, x1, y1, 1.0];
        for (col, v) in row.into_iter().enumerate() {
            a[(r, col)] = v;
        }
    }

    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("svd v_t");
    let s = &svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&x, &y| s[y].total_cmp(&s[x]));
    let largest = s[order[0]];
    let eighth = s[order[7]];
    let condition = if eighth > 0.0 { largest / eighth } else { f64::INFINITY };
    if condition > MAX_CONDITION {
        return Err(EpipolarError::Degenerate(condition));
    }
    let null = v_t.row(order[8]);
    let f_norm = Matrix3::new(null[0], null[1], null[2], null[3], null[4], null[5], null[6], null[7], null[8]);

    // rank-2 projection
    let (u, sv, vt) = svd_sorted_desc(&f_norm);
    let f_rank2 = u * Matrix3::from_diagonal(&Vector3::new(sv[0], sv[1], 0.0)) * vt;

    let f = t2.transpose() * f_rank2 * t1;
    let norm = f.norm();
    if norm == 0.0 || !norm.is_finite() {
        return Err(EpipolarError::Degenerate(f64::INFINITY));
    }
    Ok(FundamentalMatrix(f / norm))
}

/// `E = K^T F K`, projected onto the essential manifold.
pub fn to_essential(f: &FundamentalMatrix, k: &Intrinsics) -> EssentialMatrix {
    let km = k.matrix();
    let e = km.transpose() * f.0 * km;
    let (u, _, vt) = svd_sorted_desc(&e);
    EssentialMatrix(u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0)) * vt)
}

/// Midpoint triangulation in first-camera coordinates. Returns the depths of
/// the point in both cameras, or `None` for parallel rays.
pub fn triangulate_midpoint(x1: &Vector3<f64>, x2: &Vector3<f64>, r: &Matrix3<f64>, t: &Vector3<f64>) -> Option<(f64, f64)> {
    // ray 1: l1 * x1 ; ray 2 (in cam1 coords): c2 + l2 * R^T x2
    let c2 = -(r.transpose() * t);
    let d2 = r.transpose() * x2;
    let d1 = *x1;
    let a11 = d1.dot(&d1);
    let a12 = -d1.dot(&d2);
    let a22 = d2.dot(&d2);
    let b1 = d1.dot(&c2);
    let b2 = -d2.dot(&c2);
    let det = a11 * a22 - a12 * a12;
    if det.abs() < 1e-14 * a11 * a22 {
        return None;
    }
    let l1 = (b1 * a22 - a12 * b2) / det;
    let l2 = (a11 * b2 - a12 * b1) / det;
    let p = 0.5 * (l1 * d1 + c2 + l2 * d2);
    let depth1 = p.z;
    let depth2 = (r * p + t).z;
    Some((depth1, depth2))
}

/// The four `(R, t)` factorizations of an essential matrix.
pub fn pose_candidates(e: &EssentialMatrix) -> [(Matrix3<f64>, Vector3<f64>); 4] {
    let (mut u, _, mut vt) = svd_sorted_desc(&e.0);
    if u.determinant() < 0.0 {
        u.column_mut(2).neg_mut();
    }
    if vt.determinant() < 0.0 {
        vt.row_mut(2).neg_mut();
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let ra = u * w * vt;
    let rb = u * w.transpose() * vt;
    let t: Vector3<f64> = u.column(2).into();
    [(ra, t), (ra, -t), (rb, t), (rb, -t)]
}

/// Picks the candidate pose that puts the majority of visible correspondences
/// in front of both cameras.
pub fn decompose_essential(e: &EssentialMatrix, c: &CorrespondenceSet, k: &Intrinsics) -> Result<RelativePose, EpipolarError> {
    let idx = c.visible_indices();
    if idx.is_empty() {
        return Err(EpipolarError::InsufficientData(0));
    }
    let rays: Vec<(Vector3<f64>, Vector3<f64>)> = idx.iter().map(|&i| (k.unproject(&c.s1[i]), k.unproject(&c.s2[i]))).collect();

    let mut best: Option<(usize, Matrix3<f64>, Vector3<f64>)> = None;
    for (r, t) in pose_candidates(e) {
        let count = rays
            .iter()
            .filter(|(x1, x2)| matches!(triangulate_midpoint(x1, x2, &r, &t), Some((d1, d2)) if d1 > 0.0 && d2 > 0.0))
            .count();
        if best.as_ref().is_none_or(|b| count > b.0) {
            best = Some((count, r, t));
        }
    }
    let (count, r, t) = best.expect("four candidates");
    if 2 * count <= rays.len() {
        return Err(EpipolarError::Cheirality {
            best: count,
            total: rays.len(),
        });
    }
    Ok(RelativePose {
        r_delta: RotationMatrix(nearest_rotation(&r)),
        t_dir: t.normalize(),
        inlier_count: idx.len(),
        inlier_mask: c.visible.clone(),
    })
}

/// Pixel-space fundamental matrix of a relative pose.
pub fn fundamental_from_pose(pose: &RelativePose, k: &Intrinsics) -> Matrix3<f64> {
    let kinv = k.inverse_matrix();
    kinv.transpose() * pose.essential() * kinv
}

/// Root of the summed squared distances of each point to the epipolar line
/// induced by its partner.
pub fn symmetric_epipolar_distance(f: &Matrix3<f64>, p1: &Vector2<f64>, p2: &Vector2<f64>) -> f64 {
    let x1 = Vector3::new(p1.x, p1.y, 1.0);
    let x2 = Vector3::new(p2.x, p2.y, 1.0);
    let l2 = f * x1;
    let l1 = f.transpose() * x2;
    let err = x2.dot(&l2);
    let n2 = l2.x * l2.x + l2.y * l2.y;
    let n1 = l1.x * l1.x + l1.y * l1.y;
    if n1 == 0.0 || n2 == 0.0 {
        return f64::INFINITY;
    }
    (err * err * (1.0 / n1 + 1.0 / n2)).sqrt()
}

fn estimate(c: &CorrespondenceSet, k: &Intrinsics) -> Result<RelativePose, EpipolarError> {
    let f = eight_point(c)?;
    let e = to_essential(&f, k);
    decompose_essential(&e, c, k)
}

fn inliers_of(pose: &RelativePose, c: &CorrespondenceSet, k: &Intrinsics, threshold: f64) -> Vec<bool> {
    let f = fundamental_from_pose(pose, k);
    (0..c.len())
        .map(|i| c.visible[i] && symmetric_epipolar_distance(&f, &c.s1[i], &c.s2[i]) < threshold)
        .collect()
}

/// Robust relative pose: repeated eight-point fits on random minimal samples
/// of the visible pairs, scored by symmetric epipolar distance, then a refit
/// on the consensus set. Deterministic for a given seed.
pub fn ransac_relative_pose(c: &CorrespondenceSet, k: &Intrinsics, cfg: &RansacConfig) -> Result<RelativePose, EpipolarError> {
    let visible = c.visible_indices();
    if visible.len() < 8 {
        return Err(EpipolarError::InsufficientData(visible.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut best: Option<(usize, RelativePose, Vec<bool>)> = None;
    for _ in 0..cfg.iterations {
        let sample: Vec<usize> = rand::seq::index::sample(&mut rng, visible.len(), 8)
            .into_iter()
            .map(|j| visible[j])
            .collect();
        let Ok(model) = estimate(&c.subset(&sample), k) else {
            continue;
        };
        let mask = inliers_of(&model, c, k, cfg.inlier_threshold_px);
        let count = mask.iter().filter(|&&m| m).count();
        // strict comparison keeps the earliest model on ties
        if best.as_ref().is_none_or(|b| count > b.0) {
            best = Some((count, model, mask));
        }
    }
    let (count, model, mask) = best.ok_or(EpipolarError::AllDegenerate)?;

    let mut chosen = (count, model, mask);
    if count >= 8 {
        let consensus: Vec<usize> = (0..c.len()).filter(|&i| chosen.2[i]).collect();
        if let Ok(refit) = estimate(&c.subset(&consensus), k) {
            let refit_mask = inliers_of(&refit, c, k, cfg.inlier_threshold_px);
            let refit_count = refit_mask.iter().filter(|&&m| m).count();
            if refit_count >= chosen.0 {
                chosen = (refit_count, refit, refit_mask);
            }
        }
    }
    let (count, mut pose, mask) = chosen;
    pose.inlier_count = count;
    pose.inlier_mask = mask;
    Ok(pose)
}

//! Masked sliding-window bundle adjustment over static point tracks.
//!
//! Each track is a single point parameterized by its inverse depth along the
//! ray through its anchor-frame observation. Poses are world-to-camera; the
//! first pose of a sequence is the world frame. Tracks that fall inside the
//! subject mask lose visibility there and short leftovers are dropped as
//! dynamic, so the moving person never enters the objective.

use std::ops::Range;

use nalgebra::{DMatrix, DVector, Matrix2x3, SMatrix, Vector2, Vector3, Vector6};
use thiserror::Error;

use crate::epipolar::{ransac_relative_pose, triangulate_midpoint, CorrespondenceSet, RansacConfig};
use crate::geom::{exp_so3, log_so3, nearest_rotation, skew, CameraPose, Intrinsics, RotationMatrix};
use crate::shotdet::BBox;

pub type Matrix2x6 = SMatrix<f64, 2, 6>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaError {
    #[error("under-constrained window over frames {start}..{end}: {reason}")]
    UnderConstrained { start: usize, end: usize, reason: String },
    #[error("track {track} has {found} positions, expected {expected}")]
    TrackLength { track: usize, found: usize, expected: usize },
    #[error("empty frame sequence")]
    EmptySequence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointTrack {
    /// Pixel position per frame of the sequence; meaningful only where visible.
    pub positions: Vec<Vector2<f64>>,
    pub visible: Vec<bool>,
    /// Inverse depth in the anchor camera.
    pub inv_depth: f64,
    pub anchor_frame: usize,
    pub confidence: f64,
    pub dynamic: bool,
}

impl PointTrack {
    /// Track visible at the given `(frame, position)` samples of an
    /// `n_frames`-long sequence, anchored at its first sample.
    pub fn from_samples(n_frames: usize, samples: &[(usize, Vector2<f64>)]) -> Self {
        let mut positions = vec![Vector2::zeros(); n_frames];
        let mut visible = vec![false; n_frames];
        for &(f, p) in samples {
            positions[f] = p;
            visible[f] = true;
        }
        Self {
            positions,
            visible,
            inv_depth: 1.0,
            anchor_frame: samples.first().map_or(0, |s| s.0),
            confidence: 1.0,
            dynamic: false,
        }
    }

    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|&&v| v).count()
    }

    fn visible_in(&self, frames: &Range<usize>) -> impl Iterator<Item = usize> + '_ {
        frames.clone().filter(|&f| f < self.visible.len() && self.visible[f])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaConfig {
    /// Half window size; a window spans at most `2 * window + 1` frames.
    pub window: usize,
    pub gn_iters: usize,
    pub damping: f64,
    pub min_track_len: usize,
    pub confidence_threshold: f64,
    /// Iterations for the first window, which starts from a coarse
    /// two-view initialization.
    pub bootstrap_iters: usize,
    pub ransac: RansacConfig,
}

impl Default for BaConfig {
    fn default() -> Self {
        Self {
            window: 12,
            gn_iters: 2,
            damping: 1e-4,
            min_track_len: 5,
            confidence_threshold: 0.2,
            bootstrap_iters: 10,
            ransac: RansacConfig::default(),
        }
    }
}

/// Weight multiplier for tracks under the confidence threshold.
const LOW_CONFIDENCE_FACTOR: f64 = 0.1;
/// Lower bound on the fitted Cauchy scale, in pixels per frame squared.
const CAUCHY_SCALE_FLOOR: f64 = 0.5;
/// MAD to scale for a Cauchy distribution (its quartiles sit at +-scale).
const MAD_TO_CAUCHY: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct BAWindow {
    pub start: usize,
    pub window_size: usize,
    /// One pose per frame, starting at `start`.
    pub poses: Vec<CameraPose>,
    pub tracks: Vec<PointTrack>,
    /// `weights[n][j - start]`: weight of track `n` on the edge from its
    /// anchor to frame `j`.
    pub weights: Vec<Vec<f64>>,
    /// Leading poses held constant (at least 1 for the gauge).
    pub fixed_poses: usize,
    /// Total weighted squared residual before the first and after every
    /// iteration.
    pub cost_history: Vec<f64>,
}

impl BAWindow {
    pub fn new(start: usize, window_size: usize, poses: Vec<CameraPose>, tracks: Vec<PointTrack>) -> Self {
        let weights = vec![vec![0.0; poses.len()]; tracks.len()];
        Self {
            start,
            window_size,
            poses,
            tracks,
            weights,
            fixed_poses: 1,
            cost_history: Vec::new(),
        }
    }

    pub fn frames(&self) -> Range<usize> {
        self.start..self.start + self.poses.len()
    }
}

/// Tracks that are visible somewhere in `start..end`, cut to that range.
pub fn slice_tracks(tracks: &[PointTrack], start: usize, end: usize) -> Vec<PointTrack> {
    tracks
        .iter()
        .filter(|t| t.visible[start..end].iter().any(|&v| v))
        .map(|t| {
            let mut s = t.clone();
            s.positions = t.positions[start..end].to_vec();
            s.visible = t.visible[start..end].to_vec();
            s.anchor_frame = s.visible.iter().position(|&v| v).unwrap_or(0);
            s
        })
        .collect()
}

/// Removes visibility inside each frame's mask; tracks left with fewer than
/// `min_track_len` visible frames become dynamic.
pub fn mask_tracks(tracks: &[PointTrack], masks: &[Option<BBox>], min_track_len: usize) -> Vec<PointTrack> {
    tracks
        .iter()
        .map(|t| {
            let mut t = t.clone();
            for (f, mask) in masks.iter().enumerate() {
                if let Some(m) = mask {
                    if f < t.visible.len() && t.visible[f] && m.contains(&t.positions[f]) {
                        t.visible[f] = false;
                    }
                }
            }
            if t.visible_count() < min_track_len {
                t.dynamic = true;
            }
            t
        })
        .collect()
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Mean log-density of a track's second differences under a per-coordinate
/// Cauchy model fitted with median location and MAD scale. `None` when the
/// track has fewer than three visible frames in `frames`.
pub fn track_log_density(track: &PointTrack, frames: &Range<usize>) -> Option<f64> {
    let vis: Vec<usize> = track.visible_in(frames).collect();
    if vis.len() < 3 {
        return None;
    }
    let p = |f: usize| track.positions[f];
    // second divided differences in pixels per frame^2
    let dd: Vec<Vector2<f64>> = vis
        .windows(3)
        .map(|w| {
            let (a, b, c) = (w[0], w[1], w[2]);
            let v1 = (p(b) - p(a)) / (b - a) as f64;
            let v2 = (p(c) - p(b)) / (c - b) as f64;
            (v2 - v1) * (2.0 / (c - a) as f64)
        })
        .collect();
    let mut total = 0.0;
    for axis in 0..2 {
        let mut xs: Vec<f64> = dd.iter().map(|d| d[axis]).collect();
        let mu = median(&mut xs);
        let mut dev: Vec<f64> = xs.iter().map(|x| (x - mu).abs()).collect();
        let scale = (MAD_TO_CAUCHY * median(&mut dev)).max(CAUCHY_SCALE_FLOOR);
        total += dd
            .iter()
            .map(|d| {
                let z = (d[axis] - mu) / scale;
                -(std::f64::consts::PI * scale).ln() - z.mul_add(z, 1.0).ln()
            })
            .sum::<f64>();
    }
    Some(total / dd.len() as f64)
}

/// Confidence of every track in `frames`, normalized so the best
/// non-dynamic track scores 1. Dynamic tracks and tracks with too few
/// visible frames score 0.
pub fn track_confidences(tracks: &[PointTrack], frames: &Range<usize>) -> Vec<f64> {
    let logs: Vec<Option<f64>> = tracks.iter().map(|t| if t.dynamic { None } else { track_log_density(t, frames) }).collect();
    let best = logs.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    logs.iter().map(|l| l.map_or(0.0, |l| (l - best).exp())).collect()
}

/// Confidence of a single track relative to its window peers.
pub fn track_confidence(track_index: usize, tracks: &[PointTrack], frames: &Range<usize>) -> f64 {
    track_confidences(tracks, frames)[track_index]
}

/// Left-multiplicative pose update: `R <- exp(dtheta) R`, `t <- t + dt`.
pub fn perturb_pose(pose: &CameraPose, delta: &Vector6<f64>) -> CameraPose {
    let dtheta = Vector3::new(delta[0], delta[1], delta[2]);
    let dt = Vector3::new(delta[3], delta[4], delta[5]);
    CameraPose::new(RotationMatrix(exp_so3(&dtheta) * pose.r.0), pose.t + dt)
}

fn anchor_ray(k: &Intrinsics, px: &Vector2<f64>) -> Vector3<f64> {
    k.unproject(px)
}

/// Projection into `pose_j` of the point seen at `anchor_px` in `pose_i`
/// with inverse depth `inv_depth`. `None` if it lands behind camera `j`.
pub fn reproject(k: &Intrinsics, pose_i: &CameraPose, pose_j: &CameraPose, anchor_px: &Vector2<f64>, inv_depth: f64) -> Option<Vector2<f64>> {
    let q = anchor_ray(k, anchor_px);
    let xw = pose_i.r.0.transpose() * (q / inv_depth - pose_i.t);
    k.project_camera_point(&pose_j.transform(&xw)).ok()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReprojectionJacobian {
    pub pixel: Vector2<f64>,
    /// With respect to `(dtheta, dt)` of the anchor pose.
    pub d_pose_i: Matrix2x6,
    /// With respect to `(dtheta, dt)` of the target pose.
    pub d_pose_j: Matrix2x6,
    pub d_inv_depth: Vector2<f64>,
}

/// [`reproject`] together with its analytic Jacobian under [`perturb_pose`].
pub fn reprojection_jacobian(k: &Intrinsics, pose_i: &CameraPose, pose_j: &CameraPose, anchor_px: &Vector2<f64>, inv_depth: f64) -> Option<ReprojectionJacobian> {
    let q = anchor_ray(k, anchor_px);
    let ri_t = pose_i.r.0.transpose();
    let y = q / inv_depth - pose_i.t;
    let xw = ri_t * y;
    let rj = pose_j.r.0;
    let xj = rj * xw + pose_j.t;
    if xj.z <= 0.0 {
        return None;
    }
    let iz = 1.0 / xj.z;
    let pixel = Vector2::new(k.fx * xj.x * iz + k.ox, k.fy * xj.y * iz + k.oy);
    let dpix = Matrix2x3::new(k.fx * iz, 0.0, -k.fx * xj.x * iz * iz, 0.0, k.fy * iz, -k.fy * xj.y * iz * iz);

    let mut d_pose_j = Matrix2x6::zeros();
    d_pose_j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(dpix * -skew(&(rj * xw))));
    d_pose_j.fixed_view_mut::<2, 3>(0, 3).copy_from(&dpix);

    let dpix_w = dpix * rj;
    let mut d_pose_i = Matrix2x6::zeros();
    d_pose_i.fixed_view_mut::<2, 3>(0, 0).copy_from(&(dpix_w * ri_t * skew(&y)));
    d_pose_i.fixed_view_mut::<2, 3>(0, 3).copy_from(&(dpix_w * -ri_t));

    let d_inv_depth = dpix_w * (ri_t * (-q / (inv_depth * inv_depth)));
    Some(ReprojectionJacobian {
        pixel,
        d_pose_i,
        d_pose_j,
        d_inv_depth,
    })
}

#[derive(Debug, Clone, Copy)]
struct Observation {
    /// Column of the track's inverse depth.
    depth_slot: usize,
    anchor: usize,
    target: usize,
    anchor_px: Vector2<f64>,
    target_px: Vector2<f64>,
    weight: f64,
}

/// Per-edge normalized weights for every track in the window.
pub fn compute_weights(tracks: &[PointTrack], frames: &Range<usize>, window_size: usize, confidence_threshold: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
    let conf = track_confidences(tracks, frames);
    let len = frames.len();
    let mut raw = vec![vec![0.0; len]; tracks.len()];
    for (n, t) in tracks.iter().enumerate() {
        let a = t.anchor_frame;
        if t.dynamic || !frames.contains(&a) || !t.visible[a] {
            continue;
        }
        let factor = if conf[n] < confidence_threshold { LOW_CONFIDENCE_FACTOR } else { 1.0 };
        for j in t.visible_in(frames) {
            if j != a && j.abs_diff(a) <= window_size {
                raw[n][j - frames.start] = factor;
            }
        }
    }
    // normalize over tracks sharing an (anchor, target) edge
    let mut sums = vec![vec![0.0; len]; len];
    for (n, t) in tracks.iter().enumerate() {
        if frames.contains(&t.anchor_frame) {
            for j in 0..len {
                sums[t.anchor_frame - frames.start][j] += raw[n][j];
            }
        }
    }
    for (n, t) in tracks.iter().enumerate() {
        if frames.contains(&t.anchor_frame) {
            for j in 0..len {
                let s = sums[t.anchor_frame - frames.start][j];
                if s > 0.0 {
                    raw[n][j] /= s;
                }
            }
        }
    }
    (conf, raw)
}

fn collect_observations(window: &BAWindow, k: &Intrinsics) -> (Vec<Observation>, Vec<usize>) {
    let frames = window.frames();
    let mut obs = Vec::new();
    let mut depth_tracks = Vec::new();
    for (n, t) in window.tracks.iter().enumerate() {
        if t.dynamic || !frames.contains(&t.anchor_frame) || !t.visible[t.anchor_frame] || t.inv_depth <= 0.0 {
            continue;
        }
        let a = t.anchor_frame - frames.start;
        let slot = depth_tracks.len();
        let before = obs.len();
        for j in 0..window.poses.len() {
            let w = window.weights[n][j];
            if w <= 0.0 {
                continue;
            }
            let target_px = t.positions[frames.start + j];
            let anchor_px = t.positions[t.anchor_frame];
            if reproject(k, &window.poses[a], &window.poses[j], &anchor_px, t.inv_depth).is_none() {
                continue;
            }
            obs.push(Observation {
                depth_slot: slot,
                anchor: a,
                target: j,
                anchor_px,
                target_px,
                weight: w,
            });
        }
        if obs.len() > before {
            depth_tracks.push(n);
        }
    }
    (obs, depth_tracks)
}

fn total_cost(obs: &[Observation], poses: &[CameraPose], depths: &[f64], k: &Intrinsics) -> f64 {
    let mut cost = 0.0;
    for o in obs {
        match reproject(k, &poses[o.anchor], &poses[o.target], &o.anchor_px, depths[o.depth_slot]) {
            Some(p) => cost += o.weight * (p - o.target_px).norm_squared(),
            None => return f64::INFINITY,
        }
    }
    cost
}

fn check_constraints(window: &BAWindow, obs: &[Observation], depth_tracks: &[usize]) -> Result<(), BaError> {
    let frames = window.frames();
    let fail = |reason: String| {
        Err(BaError::UnderConstrained {
            start: frames.start,
            end: frames.end,
            reason,
        })
    };
    if window.poses.len() < 2 {
        return fail("fewer than 2 frames".into());
    }
    if depth_tracks.len() < 6 {
        return fail(format!("{} usable static tracks, need 6", depth_tracks.len()));
    }
    let mut per_pose = vec![0usize; window.poses.len()];
    for o in obs {
        per_pose[o.anchor] += 1;
        per_pose[o.target] += 1;
    }
    for (j, &count) in per_pose.iter().enumerate().skip(window.fixed_poses) {
        if count < 3 {
            return fail(format!("frame {} has {} observations", frames.start + j, count));
        }
    }
    Ok(())
}

/// Levenberg-damped Gauss-Newton on the window's free poses and inverse
/// depths. Runs exactly `gn_iters` iterations; a step that would raise the
/// cost or make a depth non-positive is rejected and the damping grows
/// tenfold, otherwise it shrinks tenfold.
pub fn ba_solve(window: &BAWindow, k: &Intrinsics, gn_iters: usize, damping: f64) -> Result<BAWindow, BaError> {
    let mut out = window.clone();
    let fixed = window.fixed_poses.max(1).min(window.poses.len());
    out.fixed_poses = fixed;
    let (obs, depth_tracks) = collect_observations(&out, k);
    check_constraints(&out, &obs, &depth_tracks)?;

    let free = out.poses.len() - fixed;
    let dim = 6 * free + depth_tracks.len();
    let pose_col = |j: usize| if j >= fixed { Some(6 * (j - fixed)) } else { None };

    let mut poses = out.poses.clone();
    let mut depths: Vec<f64> = depth_tracks.iter().map(|&n| out.tracks[n].inv_depth).collect();
    let mut cost = total_cost(&obs, &poses, &depths, k);
    let mut history = vec![cost];
    let mut lambda = damping;

    for _ in 0..gn_iters {
        let mut h = DMatrix::<f64>::zeros(dim, dim);
        let mut g = DVector::<f64>::zeros(dim);
        for o in &obs {
            let Some(jac) = reprojection_jacobian(k, &poses[o.anchor], &poses[o.target], &o.anchor_px, depths[o.depth_slot]) else {
                continue;
            };
            let r = jac.pixel - o.target_px;
            // sparse row: (column, 2-vector of partials)
            let mut cols: Vec<(usize, Vector2<f64>)> = Vec::with_capacity(13);
            if let Some(c) = pose_col(o.anchor) {
                for m in 0..6 {
                    cols.push((c + m, jac.d_pose_i.column(m).into()));
                }
            }
            if let Some(c) = pose_col(o.target) {
                for m in 0..6 {
                    cols.push((c + m, jac.d_pose_j.column(m).into()));
                }
            }
            cols.push((6 * free + o.depth_slot, jac.d_inv_depth));
            for &(ca, ja) in &cols {
                g[ca] += o.weight * ja.dot(&r);
                for &(cb, jb) in &cols {
                    h[(ca, cb)] += o.weight * ja.dot(&jb);
                }
            }
        }

        let mut damped = h;
        for d in 0..dim {
            damped[(d, d)] += lambda;
        }
        let step = damped.cholesky().map(|c| c.solve(&(-&g)));
        let accepted = step.and_then(|delta| {
            let mut trial_poses = poses.clone();
            for j in fixed..poses.len() {
                let c = 6 * (j - fixed);
                let d = Vector6::from_iterator(delta.rows(c, 6).iter().copied());
                trial_poses[j] = perturb_pose(&poses[j], &d);
                trial_poses[j].r = RotationMatrix(nearest_rotation(&trial_poses[j].r.0));
            }
            let trial_depths: Vec<f64> = depths.iter().enumerate().map(|(s, d)| d + delta[6 * free + s]).collect();
            if trial_depths.iter().any(|&d| d <= 0.0 || !d.is_finite()) {
                return None;
            }
            let trial_cost = total_cost(&obs, &trial_poses, &trial_depths, k);
            (trial_cost <= cost).then_some((trial_poses, trial_depths, trial_cost))
        });
        match accepted {
            Some((p, d, c)) => {
                poses = p;
                depths = d;
                cost = c;
                lambda /= 10.0;
            }
            None => lambda *= 10.0,
        }
        history.push(cost);
    }

    out.poses = poses;
    for (slot, &n) in depth_tracks.iter().enumerate() {
        out.tracks[n].inv_depth = depths[slot];
    }
    out.cost_history = history;
    Ok(out)
}

/// Builds a window over `frames` with weights and confidences filled in.
pub fn prepare_window(start: usize, poses: Vec<CameraPose>, tracks: Vec<PointTrack>, cfg: &BaConfig) -> BAWindow {
    let frames = start..start + poses.len();
    let (conf, weights) = compute_weights(&tracks, &frames, cfg.window, cfg.confidence_threshold);
    let mut window = BAWindow::new(start, cfg.window, poses, tracks);
    for (t, c) in window.tracks.iter_mut().zip(conf) {
        t.confidence = c;
    }
    window.weights = weights;
    window
}

fn interpolate_pose(end: &CameraPose, s: f64) -> CameraPose {
    CameraPose::new(RotationMatrix(exp_so3(&(log_so3(&end.r.0) * s))), end.t * s)
}

/// Constant-velocity prediction of the pose after `b` given `a` then `b`.
fn extrapolate(a: &CameraPose, b: &CameraPose) -> CameraPose {
    // relative motion in the camera frame: b = m * a
    let m = b.compose(&a.inverse());
    let mut next = m.compose(b);
    next.r = RotationMatrix(nearest_rotation(&next.r.0));
    next
}

/// Pose-only refinement against known world points.
fn resect(pose: &CameraPose, points: &[(Vector3<f64>, Vector2<f64>)], k: &Intrinsics, iters: usize) -> CameraPose {
    let residual_cost = |p: &CameraPose| -> f64 {
        points
            .iter()
            .map(|(x, px)| k.project_camera_point(&p.transform(x)).map_or(f64::INFINITY, |q| (q - px).norm_squared()))
            .sum()
    };
    let mut current = *pose;
    let mut cost = residual_cost(&current);
    let mut lambda = 1e-3;
    for _ in 0..iters {
        let mut h = SMatrix::<f64, 6, 6>::zeros();
        let mut g = Vector6::zeros();
        for (x, px) in points {
            let xc = current.transform(x);
            if xc.z <= 0.0 {
                continue;
            }
            let iz = 1.0 / xc.z;
            let dpix = Matrix2x3::new(k.fx * iz, 0.0, -k.fx * xc.x * iz * iz, 0.0, k.fy * iz, -k.fy * xc.y * iz * iz);
            let mut j = Matrix2x6::zeros();
            j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(dpix * -skew(&(current.r.0 * x))));
            j.fixed_view_mut::<2, 3>(0, 3).copy_from(&dpix);
            let r = Vector2::new(k.fx * xc.x * iz + k.ox, k.fy * xc.y * iz + k.oy) - px;
            h += j.transpose() * j;
            g += j.transpose() * r;
        }
        let damped = h + SMatrix::<f64, 6, 6>::identity() * lambda;
        let Some(chol) = damped.cholesky() else {
            lambda *= 10.0;
            continue;
        };
        let mut trial = perturb_pose(&current, &chol.solve(&(-g)));
        trial.r = RotationMatrix(nearest_rotation(&trial.r.0));
        let trial_cost = residual_cost(&trial);
        if trial_cost <= cost {
            current = trial;
            cost = trial_cost;
            lambda /= 10.0;
        } else {
            lambda *= 10.0;
        }
    }
    current
}

fn world_point(k: &Intrinsics, pose: &CameraPose, px: &Vector2<f64>, inv_depth: f64) -> Vector3<f64> {
    pose.r.0.transpose() * (anchor_ray(k, px) / inv_depth - pose.t)
}

/// Inverse depth of a track at `anchor` by midpoint triangulation against its
/// most distant visible frame in `frames`.
fn triangulate_track(t: &PointTrack, anchor: usize, frames: &Range<usize>, poses: &[Option<CameraPose>], k: &Intrinsics) -> Option<f64> {
    let other = t.visible_in(frames).filter(|&f| f != anchor && poses[f].is_some()).max_by_key(|&f| f.abs_diff(anchor))?;
    let pa = poses[anchor]?;
    let pb = poses[other]?;
    let rel = pb.compose(&pa.inverse());
    let (d1, d2) = triangulate_midpoint(&k.unproject(&t.positions[anchor]), &k.unproject(&t.positions[other]), &rel.r.0, &rel.t)?;
    // reject near-parallel rays whose depth is not trustworthy
    (d1 > 1e-3 && d2 > 1e-3 && d1 < 1e4).then_some(1.0 / d1)
}

/// Two-view initialization of the first window from frame 0 and the farthest
/// frame sharing at least 8 tracks with it; identity poses when the camera
/// does not visibly move.
fn bootstrap(tracks: &[PointTrack], end: usize, k: &Intrinsics, cfg: &BaConfig) -> Vec<CameraPose> {
    let identity = vec![CameraPose::identity(); end];
    let Some((last, common)) = (1..end).rev().find_map(|f| {
        let common: Vec<&PointTrack> = tracks.iter().filter(|t| t.visible[0] && t.visible[f]).collect();
        (common.len() >= 8).then_some((f, common))
    }) else {
        return identity;
    };
    let mut disp: Vec<f64> = common.iter().map(|t| (t.positions[last] - t.positions[0]).norm()).collect();
    if median(&mut disp) < 1.0 {
        return identity;
    }
    let c = CorrespondenceSet::all_visible(common.iter().map(|t| t.positions[0]).collect(), common.iter().map(|t| t.positions[last]).collect()).expect("equal lengths");
    match ransac_relative_pose(&c, k, &cfg.ransac) {
        Ok(rel) => {
            let pose = CameraPose::new(rel.r_delta, rel.t_dir);
            (0..end).map(|f| interpolate_pose(&pose, f as f64 / last as f64)).collect()
        }
        Err(_) => identity,
    }
}

/// Sliding-window BA over a whole shot. Windows span `2 * window + 1`
/// frames and advance by `window / 2`; each starts from the previous
/// window's estimates and holds its leading poses fixed. Returns one pose per
/// frame with the first exactly the identity.
pub fn solve_sequence(tracks: &[PointTrack], masks: &[Option<BBox>], k: &Intrinsics, cfg: &BaConfig) -> Result<Vec<CameraPose>, BaError> {
    let n = masks.len();
    if n == 0 {
        return Err(BaError::EmptySequence);
    }
    for (i, t) in tracks.iter().enumerate() {
        if t.positions.len() != n || t.visible.len() != n {
            return Err(BaError::TrackLength {
                track: i,
                found: t.positions.len().min(t.visible.len()),
                expected: n,
            });
        }
    }
    if n == 1 {
        return Ok(vec![CameraPose::identity()]);
    }
    let masked = mask_tracks(tracks, masks, cfg.min_track_len);
    let statics: Vec<PointTrack> = masked.into_iter().filter(|t| !t.dynamic).collect();

    let span = 2 * cfg.window + 1;
    let stride = (cfg.window / 2).max(1);
    let mut poses: Vec<Option<CameraPose>> = vec![None; n];
    let mut points: Vec<Option<Vector3<f64>>> = vec![None; statics.len()];

    let mut start = 0;
    loop {
        let end = (start + span).min(n);
        let frames = start..end;
        let first = start == 0;
        if first {
            for (f, p) in bootstrap(&statics, end, k, cfg).into_iter().enumerate() {
                poses[f] = Some(p);
            }
        } else {
            for f in frames.clone() {
                if poses[f].is_some() {
                    continue;
                }
                let predicted = extrapolate(&poses[f - 2].expect("solved"), &poses[f - 1].expect("solved"));
                let known: Vec<(Vector3<f64>, Vector2<f64>)> = statics
                    .iter()
                    .zip(&points)
                    .filter_map(|(t, x)| if t.visible[f] { Some((x.as_ref().copied()?, t.positions[f])) } else { None })
                    .collect();
                poses[f] = Some(if known.len() >= 6 { resect(&predicted, &known, k, 5) } else { predicted });
            }
        }

        let center = (start + end - 1) / 2;
        let mut window_tracks = Vec::new();
        let mut window_ids = Vec::new();
        let mut pending = Vec::new();
        for (id, t) in statics.iter().enumerate() {
            let vis: Vec<usize> = t.visible_in(&frames).collect();
            if vis.len() < 2 {
                continue;
            }
            let anchor = *vis.iter().min_by_key(|&&f| (f.abs_diff(center), f)).expect("non-empty");
            let pa = poses[anchor].expect("window poses set");
            let known_depth = points[id].map(|x| pa.transform(&x).z).filter(|&z| z > 1e-3).map(|z| 1.0 / z);
            let inv_depth = known_depth.or_else(|| triangulate_track(t, anchor, &frames, &poses, k));
            let mut wt = t.clone();
            wt.anchor_frame = anchor;
            match inv_depth {
                Some(d) => wt.inv_depth = d,
                None => pending.push(window_tracks.len()),
            }
            window_tracks.push(wt);
            window_ids.push(id);
        }
        let mut known: Vec<f64> = window_tracks.iter().enumerate().filter(|(i, _)| !pending.contains(i)).map(|(_, t)| t.inv_depth).collect();
        let fallback = if known.is_empty() { 1.0 } else { median(&mut known) };
        for &i in &pending {
            window_tracks[i].inv_depth = fallback;
        }

        let window_poses: Vec<CameraPose> = frames.clone().map(|f| poses[f].expect("window poses set")).collect();
        let mut window = prepare_window(start, window_poses, window_tracks, cfg);
        window.fixed_poses = if first { 1 } else { stride.min(window.poses.len() - 1) };
        let iters = if first { cfg.bootstrap_iters } else { cfg.gn_iters };
        let solved = ba_solve(&window, k, iters, cfg.damping)?;

        for (f, p) in frames.clone().zip(&solved.poses) {
            poses[f] = Some(*p);
        }
        for (t, &id) in solved.tracks.iter().zip(&window_ids) {
            let pa = solved.poses[t.anchor_frame - start];
            points[id] = Some(world_point(k, &pa, &t.positions[t.anchor_frame], t.inv_depth));
        }

        if end == n {
            break;
        }
        start += stride;
    }

    let mut out: Vec<CameraPose> = poses.into_iter().map(|p| p.expect("every frame solved")).collect();
    out[0] = CameraPose::identity();
    Ok(out)
}

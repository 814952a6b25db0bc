use nalgebra::{Matrix3, Vector2, Vector3};
use proptest::prelude::*;

use motionstitch::align::{stitch, AlignConfig, BodyState, ShotMotion, StitchedMotion};
use motionstitch::ba::{solve_sequence, BaConfig, PointTrack};
use motionstitch::config::PipelineConfig;
use motionstitch::epipolar::{decompose_essential, fundamental_from_pose, ransac_relative_pose, symmetric_epipolar_distance, RansacConfig, RelativePose};
use motionstitch::geom::{axis_angle_to_matrix, exp_so3, geodesic_distance, matrix_to_axis_angle, project, yaw_angle, yaw_component, AxisAngle, CameraPose, RotationMatrix};
use motionstitch::io;
use motionstitch::metrics::{self, MotionPair};
use motionstitch::pipeline;
use motionstitch::shotdet::{detect_shots, iou, BBox, DetectorConfig, FrameObservation};
use motionstitch::synth::{self, generate, generate_motion, two_view_scene, MotionKind, SceneSpec};
use motionstitch::traj::{foot_point, intervals, refine_trajectory, skeleton_sequence, Foot};

fn vec3(r: f64) -> impl Strategy<Value = Vector3<f64>> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn rotation() -> impl Strategy<Value = RotationMatrix> {
    vec3(3.0).prop_map(|w| RotationMatrix(exp_so3(&w)))
}

fn pose() -> impl Strategy<Value = CameraPose> {
    (rotation(), vec3(5.0)).prop_map(|(r, t)| CameraPose::new(r, t))
}

fn bbox() -> impl Strategy<Value = BBox> {
    (0.0..1000.0f64, 0.0..800.0f64, 0.0..300.0f64, 0.0..300.0f64).prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h))
}

fn kind() -> impl Strategy<Value = MotionKind> {
    prop::sample::select(MotionKind::ALL.to_vec())
}

fn small_bundle(seed: u64, shots: usize, kind: MotionKind) -> synth::GroundTruthBundle {
    generate(&SceneSpec {
        seed,
        duration_frames: 150,
        shot_count: shots,
        motion_kind: kind,
        static_point_count: 0,
        ..SceneSpec::default()
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn axis_angle_round_trip(axis in vec3(1.0).prop_filter("nonzero", |v| v.norm() > 1e-3), angle in 1e-6f64..(std::f64::consts::PI - 1e-6)) {
        let r = axis_angle_to_matrix(&AxisAngle(axis.normalize() * angle));
        let back = axis_angle_to_matrix(&matrix_to_axis_angle(&r).unwrap());
        prop_assert!((back.0 - r.0).norm() < 1e-9);
        prop_assert!((r.0.transpose() * r.0 - Matrix3::identity()).norm() < 1e-9);
        prop_assert!((r.0.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn projection_is_unchanged_by_an_inverse_round_trip(g in pose(), p in vec3(3.0)) {
        let x = p + Vector3::new(0.0, 0.0, 12.0);
        let k = synth::default_intrinsics();
        let x2 = g.inverse().transform(&g.transform(&x));
        match (project(&k, &g, &x), project(&k, &g, &x2)) {
            (Ok(a), Ok(b)) => prop_assert!((a - b).norm() < 1e-6),
            (a, b) => prop_assert_eq!(a.is_ok(), b.is_ok()),
        }
    }

    #[test]
    fn yaw_of_a_pure_yaw_is_exact(psi in -3.1f64..3.1) {
        let r = RotationMatrix::about_y(psi);
        prop_assert!((yaw_angle(&r) - psi).abs() <= 4.0 * f64::EPSILON * psi.abs().max(1.0));
        prop_assert!((yaw_component(&r).0.y - psi).abs() <= 4.0 * f64::EPSILON * psi.abs().max(1.0));
    }

    #[test]
    fn geodesic_distance_is_a_metric(a in rotation(), b in rotation(), c in rotation()) {
        let (ab, ba, bc, ac) = (geodesic_distance(&a, &b), geodesic_distance(&b, &a), geodesic_distance(&b, &c), geodesic_distance(&a, &c));
        prop_assert!((ab - ba).abs() < 1e-9);
        prop_assert!(ac <= ab + bc + 1e-9);
        prop_assert!(geodesic_distance(&a, &a) < 1e-7);
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let (x, y) = (iou(&a, &b), iou(&b, &a));
        prop_assert_eq!(x, y);
        prop_assert!((0.0..=1.0).contains(&x));
    }
}

fn translate_obs(obs: &[FrameObservation], dx: f64, dy: f64) -> Vec<FrameObservation> {
    obs.iter()
        .map(|o| {
            let mut o = o.clone();
            o.bbox = o.bbox.translated(dx, dy);
            o.mask_bbox = o.mask_bbox.map(|b| b.translated(dx, dy));
            for k in &mut o.keypoints.joints {
                k.u += dx;
                k.v += dy;
            }
            o
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn static_stream_has_no_transitions(seed in 0u64..1000) {
        let b = small_bundle(seed, 2, MotionKind::Idle);
        let still: Vec<FrameObservation> = (0..60).map(|f| FrameObservation { frame_index: f, ..b.observations[0].clone() }).collect();
        prop_assert!(detect_shots(&still, &DetectorConfig::default()).unwrap().transitions.is_empty());
    }

    #[test]
    fn detection_ignores_a_uniform_image_shift(seed in 0u64..1000, shots in 2usize..5, k in kind(), dx in -300.0f64..300.0, dy in -300.0f64..300.0) {
        let b = small_bundle(seed, shots, k);
        let cfg = DetectorConfig::default();
        let base = detect_shots(&b.observations, &cfg).unwrap();
        let moved = detect_shots(&translate_obs(&b.observations, dx, dy), &cfg).unwrap();
        prop_assert_eq!(base, moved);
    }

    #[test]
    fn duplicated_frame_adds_no_transition(seed in 0u64..1000, shots in 2usize..5, at in 0usize..149) {
        let b = small_bundle(seed, shots, MotionKind::WalkCircle);
        let cfg = DetectorConfig::default();
        let base = detect_shots(&b.observations, &cfg).unwrap();
        let mut obs = b.observations.clone();
        let mut copy = obs[at].clone();
        copy.scene_score = 1.0;
        obs.insert(at + 1, copy);
        for (f, o) in obs.iter_mut().enumerate() {
            o.frame_index = f;
        }
        let with = detect_shots(&obs, &cfg).unwrap();
        // map back to the original frame numbering
        let mapped: Vec<usize> = with.transitions.iter().map(|&t| if t > at + 1 { t - 1 } else { t }).collect();
        prop_assert!(mapped.iter().all(|t| base.transitions.contains(t)), "{:?} vs {:?}", mapped, base.transitions);
    }

    #[test]
    fn essential_decomposition_is_self_consistent(seed in 0u64..10_000, n in 30usize..100) {
        let s = two_view_scene(seed, 60f64.to_radians(), n, 0.0);
        let truth = RelativePose { r_delta: s.r_delta, t_dir: s.t_dir, inlier_count: n, inlier_mask: vec![true; n] };
        let e = motionstitch::epipolar::EssentialMatrix(truth.essential());
        let rel = decompose_essential(&e, &s.correspondences, &s.intrinsics).unwrap();
        let (a, b) = (e.0.normalize(), rel.essential().normalize());
        prop_assert!((a - b).norm().min((a + b).norm()) < 1e-6);
        prop_assert!((rel.t_dir.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ransac_is_pure_and_inliers_fit(seed in 0u64..10_000, n in 30usize..100, outliers in 0.0f64..0.3) {
        let s = two_view_scene(seed, 60f64.to_radians(), n, outliers);
        let cfg = RansacConfig { seed, ..RansacConfig::default() };
        let a = ransac_relative_pose(&s.correspondences, &s.intrinsics, &cfg).unwrap();
        let b = ransac_relative_pose(&s.correspondences, &s.intrinsics, &cfg).unwrap();
        prop_assert_eq!(&a, &b);
        let f = fundamental_from_pose(&a, &s.intrinsics);
        for (i, &inlier) in a.inlier_mask.iter().enumerate() {
            if inlier {
                let d = symmetric_epipolar_distance(&f, &s.correspondences.s1[i], &s.correspondences.s2[i]);
                prop_assert!(d < cfg.inlier_threshold_px, "inlier {} at {}", i, d);
            }
        }
    }
}

/// Orbiting camera over a static cloud, with a rectangle the moving subject
/// would occupy.
fn orbit_scene(n: usize, seed: u64) -> (Vec<PointTrack>, BBox) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let k = synth::default_intrinsics();
    let center = Vector3::new(0.0, 0.0, 8.0);
    let poses: Vec<CameraPose> = (0..n)
        .map(|f| {
            let r = RotationMatrix::about_y(0.006 * f as f64);
            CameraPose::new(r, -(r.0 * (center - r.0.transpose() * center)))
        })
        .collect();
    let mask = BBox::new(560.0, 380.0, 720.0, 620.0);
    let tracks = (0..60)
        .map(|_| {
            let x = Vector3::new(rng.random_range(-4.0..4.0), rng.random_range(-3.0..3.0), rng.random_range(6.0..13.0));
            let samples: Vec<(usize, Vector2<f64>)> = poses.iter().enumerate().filter_map(|(f, p)| project(&k, p, &x).ok().filter(|q| q.x >= 0.0 && q.x < 1280.0 && q.y >= 0.0 && q.y < 960.0).map(|q| (f, q))).collect();
            PointTrack::from_samples(n, &samples)
        })
        .collect();
    (tracks, mask)
}

/// Every joint swinging sinusoidally at 0.2 to 1.5 Hz while the body walks
/// along a gentle turn.
fn smooth_motion(seed: u64, n: usize) -> Vec<BodyState> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<[(f64, f64, f64); 3]> = (0..24)
        .map(|_| std::array::from_fn(|_| (rng.random_range(0.0..0.6), std::f64::consts::TAU * rng.random_range(0.2..1.5), rng.random_range(0.0..std::f64::consts::TAU))))
        .collect();
    let turn = rng.random_range(-0.6..0.6);
    (0..n)
        .map(|f| {
            let t = f as f64 / 30.0;
            let mut s = BodyState::rest();
            let wave = |w: &[(f64, f64, f64); 3]| Vector3::from_fn(|i, _| w[i].0 * (w[i].1 * t + w[i].2).sin());
            s.root_orient = AxisAngle(motionstitch::geom::log_so3(&(RotationMatrix::about_y(turn * t).0 * exp_so3(&(0.2 * wave(&waves[0]))))));
            for (a, w) in s.body_pose.iter_mut().zip(&waves[1..]) {
                *a = AxisAngle(wave(w));
            }
            s.translation = Vector3::new(1.2 * t, 0.9, 0.3 * t * t);
            s
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn tracks_inside_the_mask_do_not_change_the_cameras(seed in 0u64..1000, extra in 1usize..30, wobble in 0.0f64..5.0) {
        let n = 30;
        let (tracks, mask) = orbit_scene(n, seed);
        let masks = vec![Some(mask); n];
        let k = synth::default_intrinsics();
        let cfg = BaConfig::default();
        let base = solve_sequence(&tracks, &masks, &k, &cfg).unwrap();
        let mut more = tracks.clone();
        for i in 0..extra {
            let samples: Vec<(usize, Vector2<f64>)> = (0..n)
                .map(|f| (f, Vector2::new(570.0 + 4.0 * i as f64 + wobble * (f as f64 * 0.3).sin(), 400.0 + 6.0 * i as f64 + f as f64)))
                .collect();
            more.push(PointTrack::from_samples(n, &samples));
        }
        let with = solve_sequence(&more, &masks, &k, &cfg).unwrap();
        prop_assert_eq!(&base, &with);
        prop_assert_eq!(base[0], CameraPose::identity());
    }

    #[test]
    fn artificial_split_is_idempotent(seed in 0u64..1000, cut in 20usize..100) {
        let states = smooth_motion(seed, 120);
        let shots = vec![
            ShotMotion::with_canonical_camera(states[..cut].to_vec(), 0, 0),
            ShotMotion::with_canonical_camera(states[cut..].to_vec(), 1, cut),
        ];
        let out = stitch(&shots, &[RelativePose::identity()], &AlignConfig::default()).unwrap();
        prop_assert_eq!(out.provenance.iter().filter(|&&p| p == 0).count(), cut);
        prop_assert!(out.provenance.windows(2).all(|w| w[0] <= w[1]));
        for (a, b) in out.states.iter().zip(&states) {
            for j in 0..24 {
                prop_assert!(geodesic_distance(&a.node_rotation(j), &b.node_rotation(j)).to_degrees() <= 0.1);
            }
            prop_assert!((a.translation - b.translation).norm() < 0.01);
        }
    }

    #[test]
    fn refinement_pins_planted_feet_and_keeps_rotations(seed in 0u64..1000, k in kind(), drift in 0.0f64..0.08, heading in -3.0f64..3.0) {
        let (mut states, contacts) = generate_motion(k, 150, 30.0, seed);
        let dir = Vector3::new(heading.cos(), 0.0, heading.sin());
        let mut offset = Vector3::zeros();
        for (t, s) in states.iter_mut().enumerate().skip(1) {
            if contacts.left[t] || contacts.right[t] {
                offset += dir * drift;
            }
            s.translation += offset;
        }
        let motion = StitchedMotion { provenance: vec![0; states.len()], states, applied_offsets: Vec::new(), cameras: Vec::new() };
        let out = refine_trajectory(&motion, &contacts);
        let skel = skeleton_sequence(&out.states);
        for foot in Foot::BOTH {
            for (s, e) in intervals(contacts.foot(foot)) {
                let path: f64 = (s + 1..e).map(|t| (foot_point(&skel[t], foot) - foot_point(&skel[t - 1], foot)).norm()).sum();
                prop_assert!(path <= 0.01, "{:?} {}..{}: {}", foot, s, e, path);
            }
        }
        for (a, b) in out.states.iter().zip(&motion.states) {
            prop_assert_eq!(a.root_orient, b.root_orient);
            prop_assert_eq!(a.body_pose, b.body_pose);
        }
    }

    #[test]
    fn metrics_are_non_negative(seed in 0u64..1000, k in kind(), yaw in 0.0f64..0.5, noise in 0.0f64..0.2) {
        let (truth, contacts) = generate_motion(k, 60, 30.0, seed);
        let pred = synth::inject_noise(&truth, seed, yaw, noise);
        let pair = MotionPair::new(pred, truth, 30.0).unwrap();
        let r = metrics::evaluate(&pair, &contacts, None, &metrics::MetricsConfig::default()).unwrap();
        for (name, v, _) in r.records() {
            prop_assert!(v >= 0.0 && v.is_finite(), "{} = {}", name, v);
        }
    }

    #[test]
    fn zero_noise_keypoints_are_exact_projections(seed in 0u64..1000, shots in 2usize..5, k in kind()) {
        let b = small_bundle(seed, shots, k);
        let skel = skeleton_sequence(&b.motion);
        for (f, o) in b.observations.iter().enumerate() {
            for (j, kp) in o.keypoints.joints.iter().enumerate() {
                if kp.visible {
                    let p = project(&b.intrinsics, &b.cameras[f], &skel[f].joints[j]).unwrap();
                    prop_assert!((p - kp.position()).norm() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn formats_round_trip(seed in 0u64..1000, shots in 2usize..5, k in kind(), noise in 0.0f64..3.0) {
        let b = generate(&SceneSpec { seed, duration_frames: 120, shot_count: shots, motion_kind: k, static_point_count: 100, keypoint_noise_px: noise, bbox_jitter: 0.03, ..SceneSpec::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.jsonl");
        let q = dir.path().join("b.jsonl");
        let same = || std::fs::read(&p).unwrap() == std::fs::read(&q).unwrap();

        io::write_observations(&p, 30.0, &b.observations).unwrap();
        let (fps, obs) = io::read_observations(&p).unwrap();
        prop_assert_eq!(&obs, &b.observations);
        io::write_observations(&q, fps, &obs).unwrap();
        prop_assert!(same());

        io::write_poses(&p, 30.0, 7, &b.motion).unwrap();
        let (fps, start, states) = io::read_poses(&p).unwrap();
        prop_assert_eq!(start, 7);
        prop_assert_eq!(&states, &b.motion);
        io::write_poses(&q, fps, start, &states).unwrap();
        prop_assert!(same());

        io::write_cameras(&p, 30.0, &b.intrinsics, 0, &b.cameras).unwrap();
        let (fps, kk, start, cams) = io::read_cameras(&p).unwrap();
        prop_assert_eq!(&cams, &b.cameras);
        io::write_cameras(&q, fps, &kk, start, &cams).unwrap();
        prop_assert!(same());

        io::write_tracks(&p, 30.0, b.motion.len(), &b.tracks).unwrap();
        let (fps, n, tracks) = io::read_tracks(&p).unwrap();
        io::write_tracks(&q, fps, n, &tracks).unwrap();
        prop_assert!(same());

        io::write_contacts(&p, 30.0, &b.contact_schedule).unwrap();
        let (fps, c) = io::read_contacts(&p).unwrap();
        prop_assert_eq!(&c, &b.contact_schedule);
        io::write_contacts(&q, fps, &c).unwrap();
        prop_assert!(same());
    }
}

#[test]
fn per_shot_cameras_are_recovered_from_static_tracks() {
    for seed in [1u64, 4, 9] {
        let b = generate(&SceneSpec {
            seed,
            shot_count: 3,
            ..SceneSpec::default()
        })
        .unwrap();
        let cfg = PipelineConfig::default();
        let cams = pipeline::solve_cameras(&b.tracks, &b.observations, &b.segmentation, &cfg).unwrap();
        for (s, e) in b.segmentation.shot_ranges() {
            let ate = metrics::ate(&cams[s..e], &b.cameras[s..e]).unwrap();
            assert!(ate < 0.02, "seed {seed} shot {s}..{e}: ATE {ate}");
        }
    }
}

#[test]
fn rotation_error_grows_with_keypoint_noise_on_average() {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let noise = Normal::new(0.0, 1.0).unwrap();
    let (mut clean, mut noisy) = (0.0, 0.0);
    for seed in 0..40u64 {
        let s = two_view_scene(seed, 60f64.to_radians(), 60, 0.0);
        let cfg = RansacConfig { seed, ..RansacConfig::default() };
        let r = ransac_relative_pose(&s.correspondences, &s.intrinsics, &cfg).unwrap();
        clean += geodesic_distance(&r.r_delta, &s.r_delta);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut c = s.correspondences.clone();
        for p in c.s1.iter_mut().chain(c.s2.iter_mut()) {
            *p += Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng));
        }
        let r = ransac_relative_pose(&c, &s.intrinsics, &cfg).unwrap();
        noisy += geodesic_distance(&r.r_delta, &s.r_delta);
    }
    assert!(noisy >= clean);
}

#[test]
fn body_state_rest_is_the_identity_pose() {
    let s = BodyState::rest();
    assert_eq!(s.root_rotation(), RotationMatrix::identity());
}

//! Shot transition detection.
//!
//! Three cues are combined per frame: a supplied scene-similarity score, the
//! IoU of the subject's bounding boxes in consecutive frames, and the fraction
//! of body keypoints that stay within a small radius between frames. Any cue
//! firing marks the frame as the first frame of a new shot.

use nalgebra::Vector2;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShotError {
    #[error("observation stream is empty")]
    EmptyStream,
    #[error("frame indices must be contiguous: expected {expected}, found {found}")]
    NonContiguous { expected: usize, found: usize },
    #[error("keypoint count mismatch: {0} vs {1}")]
    JointCountMismatch(usize, usize),
    #[error("invalid segmentation: {0}")]
    InvalidSegmentation(String),
}

/// Axis-aligned box in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    /// Builds a box, swapping coordinates if given in the wrong order.
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            x_min: x0.min(x1),
            y_min: y0.min(y1),
            x_max: x0.max(x1),
            y_max: y0.max(y1),
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }

    /// Tight box around a set of points, `None` when the set is empty.
    pub fn enclosing<'a>(points: impl IntoIterator<Item = &'a Vector2<f64>>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut b = BBox::new(first.x, first.y, first.x, first.y);
        for p in it {
            b.x_min = b.x_min.min(p.x);
            b.y_min = b.y_min.min(p.y);
            b.x_max = b.x_max.max(p.x);
            b.y_max = b.y_max.max(p.y);
        }
        Some(b)
    }

    pub fn padded(&self, margin: f64) -> Self {
        Self {
            x_min: self.x_min - margin,
            y_min: self.y_min - margin,
            x_max: self.x_max + margin,
            y_max: self.y_max + margin,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub u: f64,
    pub v: f64,
    pub visible: bool,
    pub confidence: f64,
}

impl Keypoint {
    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.u, self.v)
    }
}

/// Per-frame 2D body keypoints; the joint count is fixed within a stream.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Keypoints2D {
    pub joints: Vec<Keypoint>,
}

impl Keypoints2D {
    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameObservation {
    pub frame_index: usize,
    pub bbox: BBox,
    pub keypoints: Keypoints2D,
    /// Similarity of this frame to the previous one, in `[0, 1]`.
    pub scene_score: f64,
    /// Region covered by the moving subject, if known.
    pub mask_bbox: Option<BBox>,
}

/// Partition of `total_frames` frames into shots; each transition is the
/// first frame of a new shot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShotSegmentation {
    pub transitions: Vec<usize>,
    pub total_frames: usize,
}

impl ShotSegmentation {
    pub fn new(transitions: Vec<usize>, total_frames: usize) -> Result<Self, ShotError> {
        if total_frames == 0 {
            return Err(ShotError::InvalidSegmentation("total_frames must be positive".into()));
        }
        for w in transitions.windows(2) {
            if w[1] <= w[0] {
                return Err(ShotError::InvalidSegmentation(format!(
                    "transitions not strictly increasing at {}",
                    w[1]
                )));
            }
        }
        if let Some(&t) = transitions.iter().find(|&&t| t == 0 || t >= total_frames) {
            return Err(ShotError::InvalidSegmentation(format!(
                "transition {t} outside [1, {}]",
                total_frames - 1
            )));
        }
        Ok(Self {
            transitions,
            total_frames,
        })
    }

    pub fn shot_count(&self) -> usize {
        self.transitions.len() + 1
    }

    /// Half-open frame ranges of every shot, in order.
    pub fn shot_ranges(&self) -> Vec<(usize, usize)> {
        let mut bounds = Vec::with_capacity(self.transitions.len() + 2);
        bounds.push(0);
        bounds.extend_from_slice(&self.transitions);
        bounds.push(self.total_frames);
        bounds.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Shot index of every frame.
    pub fn shot_of_frames(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.total_frames);
        for (i, (s, e)) in self.shot_ranges().into_iter().enumerate() {
            out.extend(std::iter::repeat_n(i, e - s));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    pub scene_threshold: f64,
    pub bbox_threshold: f64,
    pub keypoint_threshold: f64,
    /// Keypoint match radius as a fraction of the bbox diagonal.
    pub radius_fraction: f64,
    pub min_shot_len: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            scene_threshold: 0.5,
            bbox_threshold: 0.3,
            keypoint_threshold: 0.4,
            radius_fraction: 0.05,
            min_shot_len: 10,
        }
    }
}

/// Intersection over union; 0 for an empty union.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Fraction of mutually visible joints that moved at most `radius` pixels.
pub fn keypoint_iou(a: &Keypoints2D, b: &Keypoints2D, radius: f64) -> Result<f64, ShotError> {
    if a.joint_count() != b.joint_count() {
        return Err(ShotError::JointCountMismatch(a.joint_count(), b.joint_count()));
    }
    let mut shared = 0usize;
    let mut matched = 0usize;
    for (ka, kb) in a.joints.iter().zip(&b.joints) {
        if ka.visible && kb.visible {
            shared += 1;
            if (ka.position() - kb.position()).norm() <= radius {
                matched += 1;
            }
        }
    }
    if shared == 0 {
        return Ok(0.0);
    }
    Ok(matched as f64 / shared as f64)
}

/// Which cues fired between a frame and its predecessor.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CueFlags {
    pub scene: bool,
    pub bbox: bool,
    pub keypoints: bool,
}

impl CueFlags {
    pub fn any(&self) -> bool {
        self.scene || self.bbox || self.keypoints
    }
}

/// Evaluates the three cues between `prev` and `cur`.
pub fn transition_cues(prev: &FrameObservation, cur: &FrameObservation, cfg: &DetectorConfig) -> Result<CueFlags, ShotError> {
    let radius = cfg.radius_fraction * 0.5 * (prev.bbox.diagonal() + cur.bbox.diagonal());
    Ok(CueFlags {
        scene: cur.scene_score < cfg.scene_threshold,
        bbox: iou(&prev.bbox, &cur.bbox) < cfg.bbox_threshold,
        keypoints: keypoint_iou(&prev.keypoints, &cur.keypoints, radius)? < cfg.keypoint_threshold,
    })
}

/// Splits a contiguous observation stream into shots.
pub fn detect_shots(stream: &[FrameObservation], cfg: &DetectorConfig) -> Result<ShotSegmentation, ShotError> {
    let first = stream.first().ok_or(ShotError::EmptyStream)?;
    for (i, obs) in stream.iter().enumerate() {
        let expected = first.frame_index + i;
        if obs.frame_index != expected {
            return Err(ShotError::NonContiguous {
                expected,
                found: obs.frame_index,
            });
        }
    }

    let mut transitions: Vec<usize> = Vec::new();
    for i in 1..stream.len() {
        if !transition_cues(&stream[i - 1], &stream[i], cfg)?.any() {
            continue;
        }
        let last = transitions.last().copied().unwrap_or(0);
        if i - last < cfg.min_shot_len {
            continue;
        }
        transitions.push(i);
    }
    ShotSegmentation::new(transitions, stream.len())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionScore {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

/// Recall/precision/F1 of predicted transitions, matching each prediction
/// greedily to the nearest unmatched truth transition within `slack` frames.
pub fn evaluate_detector(predicted: &ShotSegmentation, truth: &ShotSegmentation, slack: usize) -> DetectionScore {
    let mut used = vec![false; truth.transitions.len()];
    let mut tp = 0usize;
    for &p in &predicted.transitions {
        let best = truth
            .transitions
            .iter()
            .enumerate()
            .filter(|(j, &t)| !used[*j] && t.abs_diff(p) <= slack)
            .min_by_key(|(j, &t)| (t.abs_diff(p), *j));
        if let Some((j, _)) = best {
            used[j] = true;
            tp += 1;
        }
    }
    let n_pred = predicted.transitions.len();
    let n_truth = truth.transitions.len();
    let recall = if n_truth == 0 { 1.0 } else { tp as f64 / n_truth as f64 };
    let precision = match (n_pred, n_truth) {
        (0, 0) => 1.0,
        (0, _) => 0.0,
        _ => tp as f64 / n_pred as f64,
    };
    let f1 = if recall + precision == 0.0 {
        0.0
    } else {
        2.0 * recall * precision / (recall + precision)
    };
    DetectionScore { recall, precision, f1 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn kp(u: f64, v: f64) -> Keypoint {
        Keypoint {
            u,
            v,
            visible: true,
            confidence: 1.0,
        }
    }

    fn frame(i: usize, bbox: BBox, pts: &[(f64, f64)], scene: f64) -> FrameObservation {
        FrameObservation {
            frame_index: i,
            bbox,
            keypoints: Keypoints2D {
                joints: pts.iter().map(|&(u, v)| kp(u, v)).collect(),
            },
            scene_score: scene,
            mask_bbox: None,
        }
    }

    const POSE_A: [(f64, f64); 6] = [(10.0, 10.0), (20.0, 10.0), (15.0, 30.0), (12.0, 50.0), (18.0, 50.0), (15.0, 5.0)];
    const POSE_B: [(f64, f64); 6] = [(60.0, 10.0), (50.0, 12.0), (45.0, 40.0), (70.0, 52.0), (30.0, 20.0), (48.0, 5.0)];

    fn stream_with_cut(len: usize, cut: usize) -> Vec<FrameObservation> {
        (0..len)
            .map(|i| {
                if i < cut {
                    frame(i, BBox::new(0.0, 0.0, 30.0, 60.0), &POSE_A, 1.0)
                } else {
                    // same background, shifted subject: bbox and keypoint cues fire
                    frame(i, BBox::new(40.0, 0.0, 80.0, 60.0), &POSE_B, if i == cut { 0.0 } else { 1.0 })
                }
            })
            .collect()
    }

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(5.0, 5.0, 6.0, 6.0)), 0.0);
        assert!((iou(&a, &BBox::new(1.0, 1.0, 3.0, 3.0)) - 1.0 / 7.0).abs() < 1e-12);
        let degenerate = BBox::new(1.0, 1.0, 1.0, 1.0);
        assert_eq!(iou(&degenerate, &degenerate), 0.0);
    }

    #[test]
    fn keypoint_iou_examples() {
        let a = Keypoints2D {
            joints: POSE_A.iter().map(|&(u, v)| kp(u, v)).collect(),
        };
        assert_eq!(keypoint_iou(&a, &a, 1.0).unwrap(), 1.0);
        let far = Keypoints2D {
            joints: POSE_A.iter().map(|&(u, v)| kp(u + 2.0, v)).collect(),
        };
        assert_eq!(keypoint_iou(&a, &far, 1.0).unwrap(), 0.0);
        // three joints within radius, three outside
        let half = Keypoints2D {
            joints: POSE_A
                .iter()
                .enumerate()
                .map(|(i, &(u, v))| if i % 2 == 0 { kp(u + 0.5, v) } else { kp(u, v + 3.0) })
                .collect(),
        };
        assert_eq!(keypoint_iou(&a, &half, 1.0).unwrap(), 0.5);
        let short = Keypoints2D { joints: vec![kp(0.0, 0.0)] };
        assert!(matches!(keypoint_iou(&a, &short, 1.0), Err(ShotError::JointCountMismatch(6, 1))));
    }

    #[test]
    fn invisible_joints_are_ignored() {
        let mut a = Keypoints2D {
            joints: POSE_A.iter().map(|&(u, v)| kp(u, v)).collect(),
        };
        let b = a.clone();
        for j in &mut a.joints {
            j.visible = false;
        }
        assert_eq!(keypoint_iou(&a, &b, 5.0).unwrap(), 0.0);
    }

    #[test]
    fn detects_single_cut() {
        let stream = stream_with_cut(100, 50);
        let seg = detect_shots(&stream, &DetectorConfig::default()).unwrap();
        assert_eq!(seg.transitions, vec![50]);
        assert_eq!(seg.shot_ranges(), vec![(0, 50), (50, 100)]);
    }

    #[test]
    fn each_cue_alone_detects_the_cut() {
        let mut stream = stream_with_cut(60, 30);
        stream[30].scene_score = 1.0;
        let seg = detect_shots(&stream, &DetectorConfig::default()).unwrap();
        assert_eq!(seg.transitions, vec![30]);

        // pose change without any box motion: only the keypoint cue can fire
        let mut stream: Vec<_> = (0..60)
            .map(|i| frame(i, BBox::new(0.0, 0.0, 80.0, 60.0), if i < 30 { &POSE_A } else { &POSE_B }, 1.0))
            .collect();
        let cues = transition_cues(&stream[29], &stream[30], &DetectorConfig::default()).unwrap();
        assert_eq!(
            cues,
            CueFlags {
                scene: false,
                bbox: false,
                keypoints: true
            }
        );
        assert_eq!(detect_shots(&stream, &DetectorConfig::default()).unwrap().transitions, vec![30]);
        // postponing the pose change by one frame moves the transition with it
        stream[30].keypoints = stream[29].keypoints.clone();
        assert_eq!(detect_shots(&stream, &DetectorConfig::default()).unwrap().transitions, vec![31]);
    }

    #[test]
    fn constant_stream_has_no_transitions() {
        let stream: Vec<_> = (0..40).map(|i| frame(i, BBox::new(0.0, 0.0, 30.0, 60.0), &POSE_A, 1.0)).collect();
        assert!(detect_shots(&stream, &DetectorConfig::default()).unwrap().transitions.is_empty());
    }

    #[test]
    fn close_transitions_are_suppressed() {
        let mut stream = stream_with_cut(100, 50);
        stream[55].scene_score = 0.0;
        stream[70].scene_score = 0.0;
        let seg = detect_shots(&stream, &DetectorConfig::default()).unwrap();
        assert_eq!(seg.transitions, vec![50, 70]);
        // a transition within min_shot_len of the stream start is dropped too
        stream[3].scene_score = 0.0;
        assert_eq!(detect_shots(&stream, &DetectorConfig::default()).unwrap().transitions, vec![50, 70]);
    }

    #[test]
    fn stream_errors() {
        assert_eq!(detect_shots(&[], &DetectorConfig::default()), Err(ShotError::EmptyStream));
        let mut stream = stream_with_cut(20, 10);
        stream[5].frame_index = 9;
        assert!(matches!(
            detect_shots(&stream, &DetectorConfig::default()),
            Err(ShotError::NonContiguous { expected: 5, found: 9 })
        ));
    }

    #[test]
    fn segmentation_validation() {
        assert!(ShotSegmentation::new(vec![0], 10).is_err());
        assert!(ShotSegmentation::new(vec![10], 10).is_err());
        assert!(ShotSegmentation::new(vec![4, 4], 10).is_err());
        let seg = ShotSegmentation::new(vec![3, 7], 10).unwrap();
        assert_eq!(seg.shot_of_frames(), vec![0, 0, 0, 1, 1, 1, 1, 2, 2, 2]);
    }

    #[test]
    fn evaluation_examples() {
        let truth = ShotSegmentation::new(vec![50, 100], 300).unwrap();
        let s = evaluate_detector(&truth, &truth, 2);
        assert_eq!((s.recall, s.precision, s.f1), (1.0, 1.0, 1.0));

        let empty = ShotSegmentation::new(vec![], 300).unwrap();
        let s = evaluate_detector(&empty, &truth, 2);
        assert_eq!((s.recall, s.precision, s.f1), (0.0, 0.0, 0.0));

        let pred = ShotSegmentation::new(vec![51, 200], 300).unwrap();
        let s = evaluate_detector(&pred, &truth, 2);
        assert_eq!((s.recall, s.precision, s.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn greedy_matching_uses_each_truth_once() {
        let truth = ShotSegmentation::new(vec![50], 300).unwrap();
        let pred = ShotSegmentation::new(vec![49, 51], 300).unwrap();
        let s = evaluate_detector(&pred, &truth, 2);
        assert_eq!((s.recall, s.precision), (1.0, 0.5));
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-100.0..100.0f64, -100.0..100.0f64, 0.0..80.0f64, 0.0..80.0f64).prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(ab, iou(&b, &a));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn detection_is_translation_invariant(dx in -500.0..500.0f64, dy in -500.0..500.0f64, cut in 12usize..48) {
            let stream = stream_with_cut(60, cut);
            let moved: Vec<_> = stream
                .iter()
                .map(|f| {
                    let mut g = f.clone();
                    g.bbox = g.bbox.translated(dx, dy);
                    for j in &mut g.keypoints.joints {
                        j.u += dx;
                        j.v += dy;
                    }
                    g
                })
                .collect();
            let cfg = DetectorConfig::default();
            prop_assert_eq!(detect_shots(&stream, &cfg).unwrap(), detect_shots(&moved, &cfg).unwrap());
        }

        #[test]
        fn duplicated_frame_adds_no_transition(cut in 12usize..48, at in 1usize..59) {
            let stream = stream_with_cut(60, cut);
            let cfg = DetectorConfig::default();
            let before = detect_shots(&stream, &cfg).unwrap().transitions.len();
            let mut copy = stream[at - 1].clone();
            copy.scene_score = 1.0;
            let mut longer = stream.clone();
            longer.insert(at, copy);
            for (i, f) in longer.iter_mut().enumerate() {
                f.frame_index = i;
            }
            prop_assert!(detect_shots(&longer, &cfg).unwrap().transitions.len() <= before);
        }
    }
}

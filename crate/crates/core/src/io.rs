//! Line-delimited JSON file formats.
//!
//! Every file starts with a header line `{format, version, fps, joint_count,
//! ...}` followed by one record per line. Floats are written in shortest
//! round-trip form, so write -> read -> write is byte-identical.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{BodyState, BODY_JOINTS, SHAPE_DIM};
use crate::ba::PointTrack;
use crate::epipolar::RelativePose;
use crate::geom::{AxisAngle, CameraPose, Intrinsics, RotationMatrix};
use crate::shotdet::{BBox, FrameObservation, Keypoint, Keypoints2D, ShotSegmentation};
use crate::traj::{ContactState, JOINT_COUNT};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot access {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{}: {message}", path.display())]
    Invalid { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub fps: f64,
    pub joint_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_frames: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ox: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oy: Option<f64>,
}

impl Header {
    pub fn new(format: &str, fps: f64) -> Self {
        Self {
            format: format.to_string(),
            version: FORMAT_VERSION,
            fps,
            joint_count: JOINT_COUNT,
            total_frames: None,
            fx: None,
            fy: None,
            ox: None,
            oy: None,
        }
    }

    pub fn with_total_frames(mut self, n: usize) -> Self {
        self.total_frames = Some(n);
        self
    }
}

/// Header line followed by one JSON value per record.
pub fn to_jsonl<T: Serialize>(header: &Header, records: &[T]) -> String {
    let mut out = serde_json::to_string(header).expect("header serializes");
    out.push('\n');
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn from_jsonl<T: DeserializeOwned>(text: &str, format: &str, path: &Path) -> Result<(Header, Vec<T>), IoError> {
    let parse_err = |line: usize, e: serde_json::Error| IoError::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| IoError::Invalid {
        path: path.to_path_buf(),
        message: "empty file".into(),
    })?;
    let header: Header = serde_json::from_str(first).map_err(|e| parse_err(1, e))?;
    let invalid = |message: String| IoError::Invalid { path: path.to_path_buf(), message };
    if header.format != format {
        return Err(invalid(format!("expected a {format} file, found {}", header.format)));
    }
    if header.version != FORMAT_VERSION {
        return Err(invalid(format!("unsupported version {}", header.version)));
    }
    if header.joint_count != JOINT_COUNT {
        return Err(invalid(format!("expected {JOINT_COUNT} joints, found {}", header.joint_count)));
    }
    let records = lines
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| parse_err(i + 1, e)))
        .collect::<Result<Vec<T>, _>>()?;
    Ok((header, records))
}

pub fn write_jsonl<T: Serialize>(path: &Path, header: &Header, records: &[T]) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| IoError::Io { path: dir.to_path_buf(), source })?;
    }
    fs::write(path, to_jsonl(header, records)).map_err(|source| IoError::Io { path: path.to_path_buf(), source })
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path, format: &str) -> Result<(Header, Vec<T>), IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::Io { path: path.to_path_buf(), source })?;
    from_jsonl(&text, format, path)
}

fn invalid(path: &Path, message: impl Into<String>) -> IoError {
    IoError::Invalid {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Frames must run `start, start + 1, ...`; returns `start`.
fn check_contiguous(path: &Path, frames: impl Iterator<Item = usize>) -> Result<usize, IoError> {
    let mut start = None;
    for (i, f) in frames.enumerate() {
        let s = *start.get_or_insert(f);
        if f != s + i {
            return Err(invalid(path, format!("frame {f} out of sequence, expected {}", s + i)));
        }
    }
    Ok(start.unwrap_or(0))
}

fn rotation_array(r: &RotationMatrix) -> [f64; 9] {
    let m = &r.0;
    [m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(1, 0)], m[(1, 1)], m[(1, 2)], m[(2, 0)], m[(2, 1)], m[(2, 2)]]
}

fn rotation_from(path: &Path, a: &[f64; 9]) -> Result<RotationMatrix, IoError> {
    RotationMatrix::try_new(Matrix3::from_row_slice(a)).map_err(|e| invalid(path, e.to_string()))
}

fn bbox_array(b: &BBox) -> [f64; 4] {
    [b.x_min, b.y_min, b.x_max, b.y_max]
}

fn bbox_from(a: &[f64; 4]) -> BBox {
    BBox::new(a[0], a[1], a[2], a[3])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationRecord {
    pub frame: usize,
    pub bbox: [f64; 4],
    pub scene_score: f64,
    /// `[u, v, visible, confidence]` per joint.
    pub keypoints: Vec<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_bbox: Option<[f64; 4]>,
}

impl From<&FrameObservation> for ObservationRecord {
    fn from(o: &FrameObservation) -> Self {
        Self {
            frame: o.frame_index,
            bbox: bbox_array(&o.bbox),
            scene_score: o.scene_score,
            keypoints: o
                .keypoints
                .joints
                .iter()
                .map(|k| [k.u, k.v, if k.visible { 1.0 } else { 0.0 }, k.confidence])
                .collect(),
            mask_bbox: o.mask_bbox.as_ref().map(bbox_array),
        }
    }
}

impl From<&ObservationRecord> for FrameObservation {
    fn from(r: &ObservationRecord) -> Self {
        Self {
            frame_index: r.frame,
            bbox: bbox_from(&r.bbox),
            keypoints: Keypoints2D {
                joints: r
                    .keypoints
                    .iter()
                    .map(|k| Keypoint {
                        u: k[0],
                        v: k[1],
                        visible: k[2] != 0.0,
                        confidence: k[3],
                    })
                    .collect(),
            },
            scene_score: r.scene_score,
            mask_bbox: r.mask_bbox.as_ref().map(bbox_from),
        }
    }
}

pub fn write_observations(path: &Path, fps: f64, obs: &[FrameObservation]) -> Result<(), IoError> {
    let records: Vec<ObservationRecord> = obs.iter().map(ObservationRecord::from).collect();
    write_jsonl(path, &Header::new("observations", fps), &records)
}

pub fn read_observations(path: &Path) -> Result<(f64, Vec<FrameObservation>), IoError> {
    let (h, records) = read_jsonl::<ObservationRecord>(path, "observations")?;
    check_contiguous(path, records.iter().map(|r| r.frame))?;
    if let Some(r) = records.iter().find(|r| r.keypoints.len() != JOINT_COUNT) {
        return Err(invalid(path, format!("frame {} has {} keypoints", r.frame, r.keypoints.len())));
    }
    Ok((h.fps, records.iter().map(FrameObservation::from).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub frame: usize,
    pub root_orient: [f64; 3],
    pub body_pose: Vec<f64>,
    pub shape: [f64; SHAPE_DIM],
    pub translation: [f64; 3],
}

impl PoseRecord {
    pub fn new(frame: usize, s: &BodyState) -> Self {
        Self {
            frame,
            root_orient: s.root_orient.0.into(),
            body_pose: s.body_pose.iter().flat_map(|a| [a.0.x, a.0.y, a.0.z]).collect(),
            shape: s.shape,
            translation: s.translation.into(),
        }
    }

    pub fn state(&self) -> Option<BodyState> {
        if self.body_pose.len() != 3 * BODY_JOINTS {
            return None;
        }
        let mut s = BodyState::rest();
        s.root_orient = AxisAngle(Vector3::from(self.root_orient));
        for (j, c) in self.body_pose.chunks_exact(3).enumerate() {
            s.body_pose[j] = AxisAngle::new(c[0], c[1], c[2]);
        }
        s.shape = self.shape;
        s.translation = Vector3::from(self.translation);
        Some(s)
    }
}

/// Poses for frames `start..start + states.len()`.
pub fn write_poses(path: &Path, fps: f64, start: usize, states: &[BodyState]) -> Result<(), IoError> {
    let records: Vec<PoseRecord> = states.iter().enumerate().map(|(i, s)| PoseRecord::new(start + i, s)).collect();
    write_jsonl(path, &Header::new("pose", fps), &records)
}

/// Returns `(fps, first frame, states)`.
pub fn read_poses(path: &Path) -> Result<(f64, usize, Vec<BodyState>), IoError> {
    let (h, records) = read_jsonl::<PoseRecord>(path, "pose")?;
    let start = check_contiguous(path, records.iter().map(|r| r.frame))?;
    let states = records
        .iter()
        .map(|r| r.state().ok_or_else(|| invalid(path, format!("frame {}: body_pose needs {} values", r.frame, 3 * BODY_JOINTS))))
        .collect::<Result<_, _>>()?;
    Ok((h.fps, start, states))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub frame: usize,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

pub fn write_cameras(path: &Path, fps: f64, k: &Intrinsics, start: usize, cameras: &[CameraPose]) -> Result<(), IoError> {
    let mut header = Header::new("camera", fps);
    (header.fx, header.fy, header.ox, header.oy) = (Some(k.fx), Some(k.fy), Some(k.ox), Some(k.oy));
    let records: Vec<CameraRecord> = cameras
        .iter()
        .enumerate()
        .map(|(i, c)| CameraRecord {
            frame: start + i,
            rotation: rotation_array(&c.r),
            translation: c.t.into(),
        })
        .collect();
    write_jsonl(path, &header, &records)
}

/// Returns `(fps, intrinsics, first frame, cameras)`.
pub fn read_cameras(path: &Path) -> Result<(f64, Intrinsics, usize, Vec<CameraPose>), IoError> {
    let (h, records) = read_jsonl::<CameraRecord>(path, "camera")?;
    let (Some(fx), Some(fy), Some(ox), Some(oy)) = (h.fx, h.fy, h.ox, h.oy) else {
        return Err(invalid(path, "camera header lacks intrinsics"));
    };
    let k = Intrinsics::new(fx, fy, ox, oy).map_err(|e| invalid(path, e.to_string()))?;
    let start = check_contiguous(path, records.iter().map(|r| r.frame))?;
    let cameras = records
        .iter()
        .map(|r| Ok(CameraPose::new(rotation_from(path, &r.rotation)?, Vector3::from(r.translation))))
        .collect::<Result<_, IoError>>()?;
    Ok((h.fps, k, start, cameras))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackRecord {
    pub track_id: usize,
    pub anchor_frame: usize,
    pub positions: Vec<(usize, f64, f64)>,
    pub dynamic: bool,
}

pub fn write_tracks(path: &Path, fps: f64, total_frames: usize, tracks: &[PointTrack]) -> Result<(), IoError> {
    let records: Vec<TrackRecord> = tracks
        .iter()
        .enumerate()
        .map(|(id, t)| TrackRecord {
            track_id: id,
            anchor_frame: t.anchor_frame,
            positions: (0..t.visible.len()).filter(|&f| t.visible[f]).map(|f| (f, t.positions[f].x, t.positions[f].y)).collect(),
            dynamic: t.dynamic,
        })
        .collect();
    write_jsonl(path, &Header::new("tracks", fps).with_total_frames(total_frames), &records)
}

/// Returns `(fps, total frames, tracks)`.
pub fn read_tracks(path: &Path) -> Result<(f64, usize, Vec<PointTrack>), IoError> {
    let (h, records) = read_jsonl::<TrackRecord>(path, "tracks")?;
    let n = h.total_frames.ok_or_else(|| invalid(path, "tracks header lacks total_frames"))?;
    let mut tracks = Vec::with_capacity(records.len());
    for r in &records {
        if let Some(&(f, _, _)) = r.positions.iter().find(|p| p.0 >= n) {
            return Err(invalid(path, format!("track {} has frame {f} beyond {n}", r.track_id)));
        }
        let samples: Vec<(usize, Vector2<f64>)> = r.positions.iter().map(|&(f, u, v)| (f, Vector2::new(u, v))).collect();
        let mut t = PointTrack::from_samples(n, &samples);
        t.anchor_frame = r.anchor_frame;
        t.dynamic = r.dynamic;
        tracks.push(t);
    }
    Ok((h.fps, n, tracks))
}

pub fn write_transitions(path: &Path, fps: f64, seg: &ShotSegmentation) -> Result<(), IoError> {
    write_jsonl(path, &Header::new("transitions", fps).with_total_frames(seg.total_frames), &seg.transitions)
}

pub fn read_transitions(path: &Path) -> Result<(f64, ShotSegmentation), IoError> {
    let (h, transitions) = read_jsonl::<usize>(path, "transitions")?;
    let n = h.total_frames.ok_or_else(|| invalid(path, "transitions header lacks total_frames"))?;
    let seg = ShotSegmentation::new(transitions, n).map_err(|e| invalid(path, e.to_string()))?;
    Ok((h.fps, seg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricRecord {
    pub video: String,
    pub metric: String,
    pub value: f64,
    pub unit: String,
}

pub fn write_metrics(path: &Path, fps: f64, records: &[MetricRecord]) -> Result<(), IoError> {
    write_jsonl(path, &Header::new("metrics", fps), records)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>, IoError> {
    Ok(read_jsonl(path, "metrics")?.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationRecord {
    pub transition: usize,
    pub rotation: [f64; 9],
    pub t_dir: [f64; 3],
    pub inlier_count: usize,
}

pub fn write_calibration(path: &Path, fps: f64, rels: &[(usize, RelativePose)]) -> Result<(), IoError> {
    let records: Vec<CalibrationRecord> = rels
        .iter()
        .map(|(t, p)| CalibrationRecord {
            transition: *t,
            rotation: rotation_array(&p.r_delta),
            t_dir: p.t_dir.into(),
            inlier_count: p.inlier_count,
        })
        .collect();
    write_jsonl(path, &Header::new("calibration", fps), &records)
}

/// Inlier masks are not stored; read poses carry an empty mask.
pub fn read_calibration(path: &Path) -> Result<(f64, Vec<(usize, RelativePose)>), IoError> {
    let (h, records) = read_jsonl::<CalibrationRecord>(path, "calibration")?;
    let rels = records
        .iter()
        .map(|r| {
            Ok((
                r.transition,
                RelativePose {
                    r_delta: rotation_from(path, &r.rotation)?,
                    t_dir: Vector3::from(r.t_dir),
                    inlier_count: r.inlier_count,
                    inlier_mask: Vec::new(),
                },
            ))
        })
        .collect::<Result<_, IoError>>()?;
    Ok((h.fps, rels))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactRecord {
    pub frame: usize,
    pub left: bool,
    pub right: bool,
    pub root_velocity: [f64; 3],
}

pub fn write_contacts(path: &Path, fps: f64, contacts: &ContactState) -> Result<(), IoError> {
    let records: Vec<ContactRecord> = (0..contacts.len())
        .map(|f| ContactRecord {
            frame: f,
            left: contacts.left[f],
            right: contacts.right[f],
            root_velocity: contacts.root_velocity[f].into(),
        })
        .collect();
    write_jsonl(path, &Header::new("contacts", fps), &records)
}

pub fn read_contacts(path: &Path) -> Result<(f64, ContactState), IoError> {
    let (h, records) = read_jsonl::<ContactRecord>(path, "contacts")?;
    if check_contiguous(path, records.iter().map(|r| r.frame))? != 0 {
        return Err(invalid(path, "contacts must start at frame 0"));
    }
    Ok((
        h.fps,
        ContactState {
            left: records.iter().map(|r| r.left).collect(),
            right: records.iter().map(|r| r.right).collect(),
            root_velocity: records.iter().map(|r| Vector3::from(r.root_velocity)).collect(),
        },
    ))
}

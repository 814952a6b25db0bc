//! Pipeline configuration as a flat `key = value` file.

use std::fmt::{self, Display};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::align::AlignConfig;
use crate::ba::BaConfig;
use crate::epipolar::RansacConfig;
use crate::geom::Intrinsics;
use crate::metrics::MetricsConfig;
use crate::shotdet::DetectorConfig;
use crate::synth::default_intrinsics;
use crate::traj::ContactConfig;

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "MOTIONSTITCH_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config line {line}: expected key = value, found '{text}'")]
    Syntax { line: usize, text: String },
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("bad value '{value}' for {key}: {reason}")]
    BadValue { key: String, value: String, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub detector: DetectorConfig,
    /// Frames of tolerance when scoring detected transitions.
    pub slack: usize,
    pub ransac: RansacConfig,
    /// Extrapolate keypoints on both sides of a cut to a common instant
    /// before estimating the relative camera pose.
    pub compensate_motion: bool,
    /// Image acceleration (px/frame^2) above which a joint is left out of
    /// the cut correspondences.
    pub max_accel_px: f64,
    pub ba: BaConfig,
    pub align: AlignConfig,
    pub contact: ContactConfig,
    pub metrics: MetricsConfig,
    pub intrinsics: Intrinsics,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            detector: DetectorConfig::default(),
            slack: 2,
            ransac: RansacConfig::default(),
            compensate_motion: true,
            max_accel_px: 1.0,
            ba: BaConfig::default(),
            align: AlignConfig::default(),
            contact: ContactConfig::default(),
            metrics: MetricsConfig::default(),
            intrinsics: default_intrinsics(),
            seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn positive(key: &str, value: &str) -> Result<f64, ConfigError> {
    let v: f64 = parse(key, value)?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(ConfigError::BadValue {
            key: key.into(),
            value: value.into(),
            reason: "must be positive".into(),
        })
    }
}

impl PipelineConfig {
    pub fn keys() -> Vec<&'static str> {
        Self::default().entries().into_iter().map(|(k, _)| k).collect()
    }

    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let d = &self.detector;
        vec![
            ("shotdet.scene_threshold", d.scene_threshold.to_string()),
            ("shotdet.bbox_threshold", d.bbox_threshold.to_string()),
            ("shotdet.keypoint_threshold", d.keypoint_threshold.to_string()),
            ("shotdet.keypoint_radius_fraction", d.radius_fraction.to_string()),
            ("shotdet.min_shot_len", d.min_shot_len.to_string()),
            ("shotdet.slack", self.slack.to_string()),
            ("ransac.iterations", self.ransac.iterations.to_string()),
            ("ransac.inlier_threshold_px", self.ransac.inlier_threshold_px.to_string()),
            ("calibrate.compensate_motion", self.compensate_motion.to_string()),
            ("calibrate.max_accel_px", self.max_accel_px.to_string()),
            ("ba.window", self.ba.window.to_string()),
            ("ba.gn_iters", self.ba.gn_iters.to_string()),
            ("ba.damping", self.ba.damping.to_string()),
            ("ba.min_track_len", self.ba.min_track_len.to_string()),
            ("ba.confidence_threshold", self.ba.confidence_threshold.to_string()),
            ("ba.bootstrap_iters", self.ba.bootstrap_iters.to_string()),
            ("align.half_window", self.align.half_window.to_string()),
            ("align.extrapolate_spin", self.align.extrapolate_spin.to_string()),
            ("traj.height_thresh_m", self.contact.height_thresh_m.to_string()),
            ("traj.vel_thresh_mps", self.contact.vel_thresh_mps.to_string()),
            ("metrics.wa_chunk", self.metrics.wa_chunk.to_string()),
            ("metrics.rpe_delta", self.metrics.rpe_delta.to_string()),
            ("camera.fx", self.intrinsics.fx.to_string()),
            ("camera.fy", self.intrinsics.fy.to_string()),
            ("camera.ox", self.intrinsics.ox.to_string()),
            ("camera.oy", self.intrinsics.oy.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "shotdet.scene_threshold" => self.detector.scene_threshold = parse(key, v)?,
            "shotdet.bbox_threshold" => self.detector.bbox_threshold = parse(key, v)?,
            "shotdet.keypoint_threshold" => self.detector.keypoint_threshold = parse(key, v)?,
            "shotdet.keypoint_radius_fraction" => self.detector.radius_fraction = positive(key, v)?,
            "shotdet.min_shot_len" => self.detector.min_shot_len = parse(key, v)?,
            "shotdet.slack" => self.slack = parse(key, v)?,
            "ransac.iterations" => self.ransac.iterations = parse(key, v)?,
            "ransac.inlier_threshold_px" => self.ransac.inlier_threshold_px = positive(key, v)?,
            "calibrate.compensate_motion" => self.compensate_motion = parse(key, v)?,
            "calibrate.max_accel_px" => self.max_accel_px = positive(key, v)?,
            "ba.window" => self.ba.window = parse(key, v)?,
            "ba.gn_iters" => self.ba.gn_iters = parse(key, v)?,
            "ba.damping" => self.ba.damping = positive(key, v)?,
            "ba.min_track_len" => self.ba.min_track_len = parse(key, v)?,
            "ba.confidence_threshold" => self.ba.confidence_threshold = parse(key, v)?,
            "ba.bootstrap_iters" => self.ba.bootstrap_iters = parse(key, v)?,
            "align.half_window" => self.align.half_window = parse(key, v)?,
            "align.extrapolate_spin" => self.align.extrapolate_spin = parse(key, v)?,
            "traj.height_thresh_m" => self.contact.height_thresh_m = positive(key, v)?,
            "traj.vel_thresh_mps" => self.contact.vel_thresh_mps = positive(key, v)?,
            "metrics.wa_chunk" => self.metrics.wa_chunk = parse(key, v)?,
            "metrics.rpe_delta" => self.metrics.rpe_delta = parse(key, v)?,
            "camera.fx" => self.intrinsics.fx = positive(key, v)?,
            "camera.fy" => self.intrinsics.fy = positive(key, v)?,
            "camera.ox" => self.intrinsics.ox = parse(key, v)?,
            "camera.oy" => self.intrinsics.oy = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        if self.ba.window == 0 || self.metrics.wa_chunk == 0 || self.metrics.rpe_delta == 0 {
            return Err(ConfigError::BadValue {
                key: key.into(),
                value: v.into(),
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_str(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// Defaults, then the config file (`path`, or the file named by
    /// [`CONFIG_ENV`]), then `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let env_path = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        if let Some(p) = path.map(Path::to_path_buf).or(env_path) {
            let text = std::fs::read_to_string(&p).map_err(|source| ConfigError::Io { path: p.clone(), source })?;
            cfg.apply_str(&text)?;
        }
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| ConfigError::Syntax { line: 0, text: o.clone() })?;
            cfg.set(k.trim(), v)?;
        }
        Ok(cfg)
    }

    pub fn ransac_config(&self) -> RansacConfig {
        RansacConfig { seed: self.seed, ..self.ransac }
    }

    pub fn ba_config(&self) -> BaConfig {
        BaConfig {
            ransac: self.ransac_config(),
            ..self.ba
        }
    }
}

impl fmt::Display for PipelineConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.entries() {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

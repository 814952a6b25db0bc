//! Reconstruction of a continuous world-frame human motion from multi-shot
//! observation streams.
//!
//! The pipeline runs in stages, each in its own module:
//!
//! 1. [`shotdet`] splits the frame stream into shots.
//! 2. [`epipolar`] estimates the relative camera rotation across every cut
//!    from body keypoints (normalized eight-point + RANSAC).
//! 3. [`ba`] recovers per-shot camera trajectories with masked sliding-window
//!    bundle adjustment over static point tracks.
//! 4. [`align`] rotates each shot into the frame of the first one and
//!    cross-fades poses at the boundaries.
//! 5. [`traj`] detects foot contacts and removes foot sliding from the root
//!    trajectory.
//! 6. [`metrics`] scores the result against ground truth.
//!
//! [`synth`] generates multi-shot scenes with exact ground truth, [`io`] holds
//! the line-delimited file formats and [`pipeline`] chains the stages.

pub mod align;
pub mod ba;
pub mod config;
pub mod epipolar;
pub mod geom;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod shotdet;
pub mod synth;
pub mod traj;

mod error;

pub use error::Error;

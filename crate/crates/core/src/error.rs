use std::path::PathBuf;

use thiserror::Error;

use crate::align::AlignError;
use crate::ba::BaError;
use crate::config::ConfigError;
use crate::epipolar::EpipolarError;
use crate::io::IoError;
use crate::metrics::MetricsError;
use crate::shotdet::ShotError;
use crate::synth::SynthError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Shot(#[from] ShotError),
    #[error(transparent)]
    Epipolar(#[from] EpipolarError),
    #[error(transparent)]
    Ba(#[from] BaError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    InvalidInput(String),
    #[error("missing input file {}", .0.display())]
    Missing(PathBuf),
    #[error("under-constrained: {0}")]
    UnderConstrained(String),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    /// 2 for bad input, 3 for under-constrained solves, 4 for broken invariants.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Ba(BaError::UnderConstrained { .. }) | Error::UnderConstrained(_) => 3,
            Error::Epipolar(EpipolarError::LengthMismatch) => 2,
            Error::Epipolar(_) => 3,
            Error::Metrics(MetricsError::Degenerate) => 3,
            Error::Invariant(_) => 4,
            _ => 2,
        }
    }
}

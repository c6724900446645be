use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("invalid body template: {0}")]
    InvalidBody(String),
    #[error("unknown body part `{0}`")]
    UnknownPart(String),
    #[error("invalid grid spec: {0}")]
    InvalidGrid(String),
    #[error("grid spec mismatch")]
    GridMismatch,
    #[error("vertex set is empty")]
    EmptyVertices,
    #[error("k = {k} exceeds vertex count {n}")]
    NeighborCount { k: usize, n: usize },
    #[error("point has nonpositive depth {0} in camera frame")]
    BehindCamera(f64),
    #[error("camera position lies on the vertical axis; azimuth undefined")]
    DegenerateAzimuth,
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("mask dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("empty interaction region for part {0}")]
    EmptyRegion(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("malformed field file: {0}")]
    Format(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}

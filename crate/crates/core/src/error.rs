use std::path::PathBuf;

use crate::volume::{Dims, Role, VoxelCoord};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid volume dimensions {0}: every axis must be at least 1")]
    InvalidDims(Dims),

    #[error("volume of {0} voxels overflows the address space")]
    DimsOverflow(String),

    #[error("invalid voxel size ({z}, {y}, {x}) nm: components must be positive and finite")]
    InvalidVoxelSize { z: f64, y: f64, x: f64 },

    #[error("buffer holds {got} values but dims {dims} require {expected}")]
    LengthMismatch {
        dims: Dims,
        expected: usize,
        got: usize,
    },

    #[error("coordinate {coord} out of bounds for volume {dims}")]
    OutOfBounds { coord: VoxelCoord, dims: Dims },

    #[error("shape mismatch: {left} vs {right}")]
    ShapeMismatch { left: Dims, right: Dims },

    #[error("expected a volume with role {expected}, got {got}")]
    WrongRole { expected: &'static str, got: Role },

    #[error("probability value {value} at linear index {index} is outside [0, 1]")]
    ProbabilityRange { index: usize, value: f32 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("label propagation did not converge within {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("marker at linear index {index} lies outside the foreground mask")]
    MarkerOutsideMask { index: usize },

    #[error("instance id {0} has no class assignment")]
    UnmappedInstance(u64),

    #[error("instance ids are not compact: expected 1..={expected}, found {found}")]
    NotCompact { expected: u64, found: u64 },

    #[error("invalid tile geometry: {0}")]
    TileGeometry(String),

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

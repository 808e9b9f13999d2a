//! Connectivity-aware instance labeling for 3D segmentation volumes.
//!
//! The crate converts semantic label volumes into instance volumes by label
//! propagation ([`lpa`]), decodes instances from probability maps with a
//! distance-transform watershed ([`decode`]), aligns resolutions and tiles
//! large volumes ([`scale`]), and scores predictions per class ([`metrics`]).

pub mod cli;
pub mod decode;
pub mod error;
pub mod instances;
pub mod io;
pub mod lpa;
pub mod metrics;
pub mod scale;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{
    Connectivity, Dims, LabeledVolume, ProbabilityVolume, Role, Volume, VoxelCoord, VoxelGrid,
    VoxelSize,
};

//! Dense 3D label volumes, coordinate arithmetic and voxel adjacency.
//!
//! All volumes are stored in z-major order: `x` varies fastest, then `y`,
//! then `z`. The linear index of a voxel is therefore
//! `z * (Dy * Dx) + y * Dx + x`, and the initial label of a foreground voxel
//! during label propagation is that index plus one.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Volume extent along each axis, in voxels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub z: usize,
    pub y: usize,
    pub x: usize,
}

impl Dims {
    /// Validated constructor; every axis must be at least one voxel and the
    /// voxel count must fit in `usize`.
    pub fn new(z: usize, y: usize, x: usize) -> Result<Self> {
        let dims = Dims { z, y, x };
        if z == 0 || y == 0 || x == 0 {
            return Err(Error::InvalidDims(dims));
        }
        dims.checked_len()
            .ok_or_else(|| Error::DimsOverflow(dims.to_string()))?;
        Ok(dims)
    }

    pub fn checked_len(&self) -> Option<usize> {
        self.z.checked_mul(self.y)?.checked_mul(self.x)
    }

    pub fn len(&self) -> usize {
        self.z * self.y * self.x
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of voxels in one z-slice.
    pub fn plane(&self) -> usize {
        self.y * self.x
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.z, self.y, self.x]
    }

    pub fn from_array(a: [usize; 3]) -> Result<Self> {
        Dims::new(a[0], a[1], a[2])
    }

    pub fn contains(&self, p: VoxelCoord) -> bool {
        p.z < self.z && p.y < self.y && p.x < self.x
    }

    pub fn linear_index(&self, p: VoxelCoord) -> Result<usize> {
        if !self.contains(p) {
            return Err(Error::OutOfBounds {
                coord: p,
                dims: *self,
            });
        }
        Ok(p.z * self.plane() + p.y * self.x + p.x)
    }

    /// Inverse of [`Dims::linear_index`]. `index` must be below `len()`.
    pub fn coord(&self, index: usize) -> VoxelCoord {
        let plane = self.plane();
        VoxelCoord {
            z: index / plane,
            y: (index % plane) / self.x,
            x: index % self.x,
        }
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.z, self.y, self.x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VoxelCoord {
    pub z: usize,
    pub y: usize,
    pub x: usize,
}

impl VoxelCoord {
    pub const ORIGIN: VoxelCoord = VoxelCoord { z: 0, y: 0, x: 0 };

    pub fn new(z: usize, y: usize, x: usize) -> Self {
        VoxelCoord { z, y, x }
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.z, self.y, self.x]
    }

    pub fn from_array(a: [usize; 3]) -> Self {
        VoxelCoord::new(a[0], a[1], a[2])
    }
}

impl fmt::Display for VoxelCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.z, self.y, self.x)
    }
}

/// Physical voxel extent in nanometers. Metadata only: adjacency is purely
/// grid-topological.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelSize {
    pub z: f64,
    pub y: f64,
    pub x: f64,
}

impl VoxelSize {
    pub fn new(z: f64, y: f64, x: f64) -> Result<Self> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !(ok(z) && ok(y) && ok(x)) {
            return Err(Error::InvalidVoxelSize { z, y, x });
        }
        Ok(VoxelSize { z, y, x })
    }

    pub fn isotropic(nm: f64) -> Result<Self> {
        VoxelSize::new(nm, nm, nm)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.z, self.y, self.x]
    }
}

impl Default for VoxelSize {
    fn default() -> Self {
        VoxelSize {
            z: 1.0,
            y: 1.0,
            x: 1.0,
        }
    }
}

/// What the integer labels of a [`LabeledVolume`] mean. Label 0 is
/// background in every role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    /// Per-voxel class id.
    Semantic,
    /// Per-voxel object id.
    Instance,
    /// 0/1 mask.
    Binary,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Semantic => "semantic",
            Role::Instance => "instance",
            Role::Binary => "binary",
        })
    }
}

/// Dense 3D grid of unsigned labels.
///
/// Labels are 64-bit so that initial propagation labels (linear index + 1)
/// never overflow, whatever the volume size.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVolume {
    dims: Dims,
    voxel_size: VoxelSize,
    role: Role,
    data: Vec<u64>,
}

impl LabeledVolume {
    /// A semantic volume with every voxel set to `fill`.
    pub fn filled(dims: Dims, voxel_size: VoxelSize, fill: u64) -> Result<Self> {
        let dims = Dims::new(dims.z, dims.y, dims.x)?;
        let voxel_size = VoxelSize::new(voxel_size.z, voxel_size.y, voxel_size.x)?;
        Ok(LabeledVolume {
            dims,
            voxel_size,
            role: Role::Semantic,
            data: vec![fill; dims.len()],
        })
    }

    pub fn from_vec(dims: Dims, voxel_size: VoxelSize, role: Role, data: Vec<u64>) -> Result<Self> {
        let dims = Dims::new(dims.z, dims.y, dims.x)?;
        let voxel_size = VoxelSize::new(voxel_size.z, voxel_size.y, voxel_size.x)?;
        if data.len() != dims.len() {
            return Err(Error::LengthMismatch {
                dims,
                expected: dims.len(),
                got: data.len(),
            });
        }
        Ok(LabeledVolume {
            dims,
            voxel_size,
            role,
            data,
        })
    }

    /// Unit voxel size, for tests and synthetic inputs.
    pub fn from_shape(dims: [usize; 3], role: Role, data: Vec<u64>) -> Result<Self> {
        LabeledVolume::from_vec(Dims::from_array(dims)?, VoxelSize::default(), role, data)
    }

    pub(crate) fn from_parts_unchecked(
        dims: Dims,
        voxel_size: VoxelSize,
        role: Role,
        data: Vec<u64>,
    ) -> Self {
        debug_assert_eq!(data.len(), dims.len());
        LabeledVolume {
            dims,
            voxel_size,
            role,
            data,
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn voxel_size(&self) -> VoxelSize {
        self.voxel_size
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn data(&self) -> &[u64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u64> {
        self.data
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub fn get(&self, p: VoxelCoord) -> Result<u64> {
        Ok(self.data[self.dims.linear_index(p)?])
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn max_label(&self) -> u64 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Collapse every nonzero label to 1.
    pub fn binarized(&self) -> LabeledVolume {
        LabeledVolume {
            dims: self.dims,
            voxel_size: self.voxel_size,
            role: Role::Binary,
            data: self.data.iter().map(|&v| u64::from(v != 0)).collect(),
        }
    }

    pub(crate) fn require_role(&self, allowed: &[Role], expected: &'static str) -> Result<()> {
        if allowed.contains(&self.role) {
            Ok(())
        } else {
            Err(Error::WrongRole {
                expected,
                got: self.role,
            })
        }
    }

    pub(crate) fn require_same_dims(&self, other: Dims) -> Result<()> {
        if self.dims != other {
            return Err(Error::ShapeMismatch {
                left: self.dims,
                right: other,
            });
        }
        Ok(())
    }
}

/// Per-voxel foreground probabilities for a single class.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVolume {
    dims: Dims,
    voxel_size: VoxelSize,
    data: Vec<f32>,
}

impl ProbabilityVolume {
    pub fn from_vec(dims: Dims, voxel_size: VoxelSize, data: Vec<f32>) -> Result<Self> {
        let dims = Dims::new(dims.z, dims.y, dims.x)?;
        let voxel_size = VoxelSize::new(voxel_size.z, voxel_size.y, voxel_size.x)?;
        if data.len() != dims.len() {
            return Err(Error::LengthMismatch {
                dims,
                expected: dims.len(),
                got: data.len(),
            });
        }
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::ProbabilityRange { index, value });
        }
        Ok(ProbabilityVolume {
            dims,
            voxel_size,
            data,
        })
    }

    pub fn from_shape(dims: [usize; 3], data: Vec<f32>) -> Result<Self> {
        ProbabilityVolume::from_vec(Dims::from_array(dims)?, VoxelSize::default(), data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn voxel_size(&self) -> VoxelSize {
        self.voxel_size
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}

/// Either kind of dense volume, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum Volume {
    Labels(LabeledVolume),
    Probability(ProbabilityVolume),
}

impl Volume {
    pub fn dims(&self) -> Dims {
        match self {
            Volume::Labels(v) => v.dims(),
            Volume::Probability(v) => v.dims(),
        }
    }

    pub fn voxel_size(&self) -> VoxelSize {
        match self {
            Volume::Labels(v) => v.voxel_size(),
            Volume::Probability(v) => v.voxel_size(),
        }
    }

    pub fn into_labels(self) -> Result<LabeledVolume> {
        match self {
            Volume::Labels(v) => Ok(v),
            Volume::Probability(_) => Err(Error::InvalidParameter(
                "expected a label volume, got a probability volume".into(),
            )),
        }
    }

    pub fn into_probability(self) -> Result<ProbabilityVolume> {
        match self {
            Volume::Probability(v) => Ok(v),
            Volume::Labels(v) => Err(Error::InvalidParameter(format!(
                "expected a probability volume, got a {} label volume",
                v.role()
            ))),
        }
    }
}

impl From<LabeledVolume> for Volume {
    fn from(v: LabeledVolume) -> Self {
        Volume::Labels(v)
    }
}

impl From<ProbabilityVolume> for Volume {
    fn from(v: ProbabilityVolume) -> Self {
        Volume::Probability(v)
    }
}

/// Shared view over the two dense volume kinds, used by resampling, cropping
/// and tiling.
pub trait VoxelGrid: Sized + Send + Sync {
    type Value: Copy + Send + Sync + PartialEq;

    fn dims(&self) -> Dims;
    fn voxel_size(&self) -> VoxelSize;
    fn values(&self) -> &[Self::Value];

    /// A new grid of the same kind (and role) with different geometry.
    fn rebuild(&self, dims: Dims, voxel_size: VoxelSize, values: Vec<Self::Value>) -> Result<Self>;
}

impl VoxelGrid for LabeledVolume {
    type Value = u64;

    fn dims(&self) -> Dims {
        self.dims
    }

    fn voxel_size(&self) -> VoxelSize {
        self.voxel_size
    }

    fn values(&self) -> &[u64] {
        &self.data
    }

    fn rebuild(&self, dims: Dims, voxel_size: VoxelSize, values: Vec<u64>) -> Result<Self> {
        LabeledVolume::from_vec(dims, voxel_size, self.role, values)
    }
}

impl VoxelGrid for ProbabilityVolume {
    type Value = f32;

    fn dims(&self) -> Dims {
        self.dims
    }

    fn voxel_size(&self) -> VoxelSize {
        self.voxel_size
    }

    fn values(&self) -> &[f32] {
        &self.data
    }

    fn rebuild(&self, dims: Dims, voxel_size: VoxelSize, values: Vec<f32>) -> Result<Self> {
        ProbabilityVolume::from_vec(dims, voxel_size, values)
    }
}

/// Voxel neighborhood: faces (6), faces and edges (18), or faces, edges and
/// corners (26).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Connectivity {
    C6,
    C18,
    #[default]
    C26,
}

const fn build_offsets<const N: usize>(max_l1: i8) -> [[i8; 3]; N] {
    let mut out = [[0i8; 3]; N];
    let mut n = 0;
    let mut dz = -1;
    while dz <= 1 {
        let mut dy = -1;
        while dy <= 1 {
            let mut dx = -1;
            while dx <= 1 {
                let l1 = dz * dz + dy * dy + dx * dx;
                if l1 != 0 && l1 <= max_l1 {
                    out[n] = [dz, dy, dx];
                    n += 1;
                }
                dx += 1;
            }
            dy += 1;
        }
        dz += 1;
    }
    out
}

// Lexicographic (dz, dy, dx) order, which is ascending linear offset.
static OFFSETS_6: [[i8; 3]; 6] = build_offsets::<6>(1);
static OFFSETS_18: [[i8; 3]; 18] = build_offsets::<18>(2);
static OFFSETS_26: [[i8; 3]; 26] = build_offsets::<26>(3);

impl Connectivity {
    pub const ALL: [Connectivity; 3] = [Connectivity::C6, Connectivity::C18, Connectivity::C26];

    pub fn offsets(self) -> &'static [[i8; 3]] {
        match self {
            Connectivity::C6 => &OFFSETS_6,
            Connectivity::C18 => &OFFSETS_18,
            Connectivity::C26 => &OFFSETS_26,
        }
    }

    pub fn neighbor_count(self) -> usize {
        self.offsets().len()
    }

    pub fn from_count(n: usize) -> Option<Self> {
        match n {
            6 => Some(Connectivity::C6),
            18 => Some(Connectivity::C18),
            26 => Some(Connectivity::C26),
            _ => None,
        }
    }
}

impl fmt::Display for Connectivity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.neighbor_count())
    }
}

impl FromStr for Connectivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().trim_start_matches(['c', 'C']);
        s.parse::<usize>()
            .ok()
            .and_then(Connectivity::from_count)
            .ok_or_else(|| Error::InvalidParameter(format!("connectivity must be 6, 18 or 26, got {s:?}")))
    }
}

/// In-bounds neighbors of `p`, in ascending linear-index order.
pub fn neighbors(p: VoxelCoord, conn: Connectivity, dims: Dims) -> Result<Vec<VoxelCoord>> {
    dims.linear_index(p)?;
    Ok(conn
        .offsets()
        .iter()
        .filter_map(|&off| offset_coord(p, off, dims))
        .collect())
}

fn offset_coord(p: VoxelCoord, [dz, dy, dx]: [i8; 3], dims: Dims) -> Option<VoxelCoord> {
    let shift = |c: usize, d: i8, n: usize| {
        let v = c.checked_add_signed(d as isize)?;
        (v < n).then_some(v)
    };
    Some(VoxelCoord {
        z: shift(p.z, dz, dims.z)?,
        y: shift(p.y, dy, dims.y)?,
        x: shift(p.x, dx, dims.x)?,
    })
}

/// Neighbor offsets resolved against a concrete volume shape, for hot loops
/// that walk voxels by linear index.
#[derive(Debug, Clone)]
pub(crate) struct Stencil {
    dims: Dims,
    offsets: &'static [[i8; 3]],
    linear: Vec<isize>,
}

impl Stencil {
    pub fn new(dims: Dims, conn: Connectivity) -> Self {
        let offsets = conn.offsets();
        let linear = offsets
            .iter()
            .map(|&[dz, dy, dx]| {
                dz as isize * dims.plane() as isize + dy as isize * dims.x as isize + dx as isize
            })
            .collect();
        Stencil {
            dims,
            offsets,
            linear,
        }
    }

    #[inline]
    pub fn is_interior(&self, z: usize, y: usize, x: usize) -> bool {
        z > 0
            && y > 0
            && x > 0
            && z + 1 < self.dims.z
            && y + 1 < self.dims.y
            && x + 1 < self.dims.x
    }

    /// Calls `f` with the linear index of every in-bounds neighbor of the
    /// voxel at `(z, y, x)` whose linear index is `idx`.
    #[inline]
    pub fn for_each(&self, idx: usize, z: usize, y: usize, x: usize, mut f: impl FnMut(usize)) {
        if self.is_interior(z, y, x) {
            for &off in &self.linear {
                f(idx.wrapping_add_signed(off));
            }
        } else {
            for (&[dz, dy, dx], &off) in self.offsets.iter().zip(&self.linear) {
                if in_range(z, dz, self.dims.z)
                    && in_range(y, dy, self.dims.y)
                    && in_range(x, dx, self.dims.x)
                {
                    f(idx.wrapping_add_signed(off));
                }
            }
        }
    }
}

#[inline]
pub(crate) fn in_range(c: usize, d: i8, n: usize) -> bool {
    match d {
        0 => true,
        d if d < 0 => c > 0,
        _ => c + 1 < n,
    }
}

//! Resolution alignment, random crops, overlapping tiles with exact
//! stitching, and a diagnostic that counts how tiling fragments instances.
//!
//! 2D images are volumes with a single z slice; a 2D tile or crop is a 3D one
//! with depth 1.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lpa::{run_lpa, LpaConfig, Schedule};
use crate::volume::{
    Connectivity, Dims, LabeledVolume, ProbabilityVolume, Volume, VoxelCoord, VoxelGrid, VoxelSize,
};

/// Target in-plane resolution used for scale alignment, nm per pixel.
pub const DEFAULT_TARGET_RES_NM: f64 = 8.0;
/// Default 2D patch edge, in pixels.
pub const DEFAULT_PATCH: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Nearest,
    Trilinear,
}

impl FromStr for Interpolation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(Interpolation::Nearest),
            "trilinear" | "linear" => Ok(Interpolation::Trilinear),
            _ => Err(Error::InvalidParameter(format!(
                "interpolation must be nearest or trilinear, got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResampleSpec {
    pub source: VoxelSize,
    pub target: VoxelSize,
    pub interpolation: Interpolation,
}

impl ResampleSpec {
    /// Resample from the volume's own voxel size.
    pub fn to_target(volume: &impl VoxelGrid, target: VoxelSize, interpolation: Interpolation) -> Self {
        ResampleSpec {
            source: volume.voxel_size(),
            target,
            interpolation,
        }
    }

    fn validate(&self) -> Result<()> {
        let s = self.source;
        let t = self.target;
        VoxelSize::new(s.z, s.y, s.x)?;
        VoxelSize::new(t.z, t.y, t.x)?;
        Ok(())
    }

    /// Source voxels per output voxel, per axis.
    fn step(&self) -> [f64; 3] {
        let (s, t) = (self.source.as_array(), self.target.as_array());
        [t[0] / s[0], t[1] / s[1], t[2] / s[2]]
    }

    fn output_dims(&self, dims: Dims) -> Result<Dims> {
        let s = self.source.as_array();
        let t = self.target.as_array();
        let d = dims.as_array();
        let axis = |k: usize| ((d[k] as f64 * s[k] / t[k]).round() as usize).max(1);
        Dims::new(axis(0), axis(1), axis(2))
    }
}

/// Source coordinate sampled by output index `i`: pixel centers aligned,
/// clamped to the source extent.
fn source_coord(i: usize, step: f64, n: usize) -> f64 {
    ((i as f64 + 0.5) * step - 0.5).clamp(0.0, (n - 1) as f64)
}

fn nearest_table(out: usize, step: f64, n: usize) -> Vec<usize> {
    (0..out)
        .map(|i| (source_coord(i, step, n).round() as usize).min(n - 1))
        .collect()
}

fn linear_table(out: usize, step: f64, n: usize) -> Vec<(usize, usize, f64)> {
    (0..out)
        .map(|i| {
            let c = source_coord(i, step, n);
            let lo = c.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            (lo, hi, c - lo as f64)
        })
        .collect()
}

fn resample_nearest<V: VoxelGrid>(volume: &V, spec: &ResampleSpec) -> Result<V> {
    let dims = volume.dims();
    let out = spec.output_dims(dims)?;
    let step = spec.step();
    let tz = nearest_table(out.z, step[0], dims.z);
    let ty = nearest_table(out.y, step[1], dims.y);
    let tx = nearest_table(out.x, step[2], dims.x);
    let src = volume.values();
    let data: Vec<V::Value> = (0..out.z)
        .into_par_iter()
        .flat_map_iter(|z| {
            let (tz, ty, tx) = (&tz, &ty, &tx);
            (0..out.y).flat_map(move |y| {
                let row = tz[z] * dims.plane() + ty[y] * dims.x;
                tx.iter().map(move |&x| src[row + x])
            })
        })
        .collect();
    volume.rebuild(out, spec.target, data)
}

fn resample_trilinear(volume: &ProbabilityVolume, spec: &ResampleSpec) -> Result<ProbabilityVolume> {
    let dims = volume.dims();
    let out = spec.output_dims(dims)?;
    let step = spec.step();
    let tz = linear_table(out.z, step[0], dims.z);
    let ty = linear_table(out.y, step[1], dims.y);
    let tx = linear_table(out.x, step[2], dims.x);
    let src = volume.data();
    let at = |z: usize, y: usize, x: usize| f64::from(src[z * dims.plane() + y * dims.x + x]);
    let data: Vec<f32> = (0..out.z)
        .into_par_iter()
        .flat_map_iter(|z| {
            let (ty, tx) = (&ty, &tx);
            let (z0, z1, fz) = tz[z];
            (0..out.y).flat_map(move |y| {
                let (y0, y1, fy) = ty[y];
                tx.iter().map(move |&(x0, x1, fx)| {
                    let lerp = |a: f64, b: f64, t: f64| a * (1.0 - t) + b * t;
                    let plane = |z: usize| {
                        lerp(
                            lerp(at(z, y0, x0), at(z, y0, x1), fx),
                            lerp(at(z, y1, x0), at(z, y1, x1), fx),
                            fy,
                        )
                    };
                    (lerp(plane(z0), plane(z1), fz) as f32).clamp(0.0, 1.0)
                })
            })
        })
        .collect();
    ProbabilityVolume::from_vec(out, spec.target, data)
}

/// Resamples to `spec.target`. Output extent per axis is
/// `round(dims * source / target)`, at least 1. Label volumes only accept
/// nearest-neighbor sampling.
pub fn resample(volume: &Volume, spec: &ResampleSpec) -> Result<Volume> {
    spec.validate()?;
    match (volume, spec.interpolation) {
        (Volume::Labels(v), _) => Ok(resample_labels(v, spec)?.into()),
        (Volume::Probability(v), Interpolation::Nearest) => Ok(resample_nearest(v, spec)?.into()),
        (Volume::Probability(v), Interpolation::Trilinear) => Ok(resample_trilinear(v, spec)?.into()),
    }
}

pub fn resample_labels(volume: &LabeledVolume, spec: &ResampleSpec) -> Result<LabeledVolume> {
    spec.validate()?;
    match spec.interpolation {
        Interpolation::Nearest => resample_nearest(volume, spec),
        Interpolation::Trilinear => Err(Error::InvalidParameter(format!(
            "trilinear interpolation would invent labels in a {} volume; use nearest",
            volume.role()
        ))),
    }
}

/// Copies the box `[origin, origin + size)`.
pub fn crop<V: VoxelGrid>(volume: &V, origin: VoxelCoord, size: Dims) -> Result<V> {
    let dims = volume.dims();
    let o = origin.as_array();
    let s = size.as_array();
    let d = dims.as_array();
    if (0..3).any(|k| o[k] + s[k] > d[k]) {
        return Err(Error::TileGeometry(format!(
            "box {size} at {origin} exceeds volume {dims}"
        )));
    }
    let src = volume.values();
    let mut data = Vec::with_capacity(size.len());
    for z in 0..size.z {
        for y in 0..size.y {
            let start = (origin.z + z) * dims.plane() + (origin.y + y) * dims.x + origin.x;
            data.extend_from_slice(&src[start..start + size.x]);
        }
    }
    volume.rebuild(size, volume.voxel_size(), data)
}

/// A crop of `size` at an origin drawn uniformly from all valid positions,
/// reproducible from `seed`.
pub fn random_crop<V: VoxelGrid>(volume: &V, size: Dims, seed: u64) -> Result<(V, VoxelCoord)> {
    let d = volume.dims().as_array();
    let s = size.as_array();
    if (0..3).any(|k| s[k] > d[k]) {
        return Err(Error::TileGeometry(format!(
            "crop {size} exceeds volume {}",
            volume.dims()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut origin = [0usize; 3];
    for k in 0..3 {
        origin[k] = rng.random_range(0..=d[k] - s[k]);
    }
    let origin = VoxelCoord::from_array(origin);
    Ok((crop(volume, origin, size)?, origin))
}

/// Tile or crop extent written as `YxX` (depth 1) or `ZxYxX`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Extent(pub [usize; 3]);

impl Extent {
    pub fn planar(y: usize, x: usize) -> Self {
        Extent([1, y, x])
    }
}

impl FromStr for Extent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split(['x', 'X', ','])
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::InvalidParameter(format!("cannot parse extent {s:?}")))?;
        match parts[..] {
            [y, x] => Ok(Extent([1, y, x])),
            [z, y, x] => Ok(Extent([z, y, x])),
            _ => Err(Error::InvalidParameter(format!(
                "extent must be YxX or ZxYxX, got {s:?}"
            ))),
        }
    }
}

impl fmt::Display for Extent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [z, y, x] = self.0;
        if z == 1 {
            write!(f, "{y}x{x}")
        } else {
            write!(f, "{z}x{y}x{x}")
        }
    }
}

/// Deterministic placement of overlapping tiles over a volume.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileIndex {
    pub dims: Dims,
    pub tile_size: [usize; 3],
    pub overlap: [usize; 3],
    /// Tile origins in z-major order of the tile grid, which is also
    /// ascending linear index of the origin voxel.
    pub origins: Vec<VoxelCoord>,
}

/// Origins along one axis: stride `tile - overlap`, with the last tile
/// shifted back so it ends exactly at the volume edge.
fn axis_origins(n: usize, tile: usize, overlap: usize) -> Vec<usize> {
    let stride = tile - overlap;
    let mut origins = Vec::new();
    let mut o = 0;
    loop {
        if o + tile >= n {
            origins.push(n - tile);
            break;
        }
        origins.push(o);
        o += stride;
    }
    origins.dedup();
    origins
}

impl TileIndex {
    pub fn new(dims: Dims, tile_size: [usize; 3], overlap: [usize; 3]) -> Result<Self> {
        let d = dims.as_array();
        for k in 0..3 {
            if tile_size[k] == 0 || tile_size[k] > d[k] {
                return Err(Error::TileGeometry(format!(
                    "tile {tile_size:?} does not fit volume {dims}"
                )));
            }
            if overlap[k] >= tile_size[k] {
                return Err(Error::TileGeometry(format!(
                    "overlap {overlap:?} must be smaller than tile {tile_size:?} on every axis"
                )));
            }
        }
        let per_axis = self::per_axis_origins(d, tile_size, overlap);
        let mut origins = Vec::new();
        for &z in &per_axis[0] {
            for &y in &per_axis[1] {
                for &x in &per_axis[2] {
                    origins.push(VoxelCoord::new(z, y, x));
                }
            }
        }
        Ok(TileIndex {
            dims,
            tile_size,
            overlap,
            origins,
        })
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn tile_dims(&self) -> Dims {
        Dims {
            z: self.tile_size[0],
            y: self.tile_size[1],
            x: self.tile_size[2],
        }
    }

    fn validate(&self) -> Result<()> {
        let rebuilt = TileIndex::new(self.dims, self.tile_size, self.overlap)?;
        if rebuilt.origins != self.origins {
            return Err(Error::TileGeometry(
                "tile origins do not match the tiling geometry".into(),
            ));
        }
        Ok(())
    }

    fn owners(&self) -> Ownership {
        Ownership::new(self)
    }
}

fn per_axis_origins(d: [usize; 3], tile: [usize; 3], overlap: [usize; 3]) -> [Vec<usize>; 3] {
    [0, 1, 2].map(|k| axis_origins(d[k], tile[k], overlap[k]))
}

/// Which tile owns each voxel when tiles overlap: the tile whose center is
/// nearest in Chebyshev distance, ties going to the lower tile index.
struct Ownership {
    /// Per axis: origins, and for each coordinate the grid positions whose
    /// tile covers it.
    origins: [Vec<usize>; 3],
    covering: [Vec<Vec<usize>>; 3],
    tile: [usize; 3],
}

impl Ownership {
    fn new(index: &TileIndex) -> Self {
        let d = index.dims.as_array();
        let origins = per_axis_origins(d, index.tile_size, index.overlap);
        let covering = [0, 1, 2].map(|k| {
            let mut cov = vec![Vec::new(); d[k]];
            for (i, &o) in origins[k].iter().enumerate() {
                for c in cov.iter_mut().skip(o).take(index.tile_size[k]) {
                    c.push(i);
                }
            }
            cov
        });
        Ownership {
            origins,
            covering,
            tile: index.tile_size,
        }
    }

    /// Twice the distance from coordinate `c` to the center of the tile at
    /// grid position `i` on axis `k`.
    fn twice_offset(&self, k: usize, i: usize, c: usize) -> usize {
        let center2 = 2 * self.origins[k][i] + self.tile[k] - 1;
        (2 * c).abs_diff(center2)
    }

    /// Returns the owning tile's index and the voxel's coordinate inside it.
    fn owner(&self, p: [usize; 3]) -> (usize, [usize; 3]) {
        let (ny, nx) = (self.origins[1].len(), self.origins[2].len());
        let mut best: Option<(usize, usize, [usize; 3])> = None;
        for &iz in &self.covering[0][p[0]] {
            let dz = self.twice_offset(0, iz, p[0]);
            for &iy in &self.covering[1][p[1]] {
                let dy = self.twice_offset(1, iy, p[1]);
                for &ix in &self.covering[2][p[2]] {
                    let dist = dz.max(dy).max(self.twice_offset(2, ix, p[2]));
                    let tile = (iz * ny + iy) * nx + ix;
                    // candidates arrive in ascending tile order, so strict
                    // comparison keeps the lower index on ties
                    if best.is_none_or(|(d, _, _)| dist < d) {
                        best = Some((dist, tile, [iz, iy, ix]));
                    }
                }
            }
        }
        let (_, tile, grid) = best.expect("every voxel is covered by a tile");
        let local = [0, 1, 2].map(|k| p[k] - self.origins[k][grid[k]]);
        (tile, local)
    }
}

/// Splits a volume into overlapping tiles.
pub fn tile<V: VoxelGrid>(
    volume: &V,
    tile_size: [usize; 3],
    overlap: [usize; 3],
) -> Result<(Vec<V>, TileIndex)> {
    let index = TileIndex::new(volume.dims(), tile_size, overlap)?;
    let size = index.tile_dims();
    let tiles = index
        .origins
        .par_iter()
        .map(|&o| crop(volume, o, size))
        .collect::<Result<Vec<_>>>()?;
    Ok((tiles, index))
}

/// Reassembles tiles; where tiles overlap, each voxel is taken from the tile
/// whose center is closest (Chebyshev), ties to the lower tile index.
pub fn stitch<V: VoxelGrid>(tiles: &[V], index: &TileIndex) -> Result<V> {
    index.validate()?;
    if tiles.len() != index.len() {
        return Err(Error::TileGeometry(format!(
            "index lists {} tiles, got {}",
            index.len(),
            tiles.len()
        )));
    }
    let size = index.tile_dims();
    if let Some(t) = tiles.iter().find(|t| t.dims() != size) {
        return Err(Error::TileGeometry(format!(
            "tile of shape {} does not match index tile shape {size}",
            t.dims()
        )));
    }
    let dims = index.dims;
    let owners = index.owners();
    let data: Vec<V::Value> = (0..dims.z)
        .into_par_iter()
        .flat_map_iter(|z| {
            let owners = &owners;
            (0..dims.y).flat_map(move |y| {
                (0..dims.x).map(move |x| {
                    let (t, [lz, ly, lx]) = owners.owner([z, y, x]);
                    tiles[t].values()[(lz * size.y + ly) * size.x + lx]
                })
            })
        })
        .collect();
    tiles[0].rebuild(dims, tiles[0].voxel_size(), data)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FragmentationReport {
    /// Instances in the untiled volume.
    pub instances_global: u64,
    /// Instances summed over tiles, counting each voxel only in the tile
    /// that owns it.
    pub instances_after_tiling: u64,
    /// Global instances broken into two or more per-tile pieces.
    pub split_instances: u64,
    /// Number of per-tile pieces of every global instance.
    pub per_instance_fragments: BTreeMap<u64, u64>,
}

/// Labels the whole volume and every tile independently, then counts how
/// many per-tile pieces each global instance breaks into.
pub fn fragmentation_report(
    semantic: &LabeledVolume,
    tile_size: [usize; 3],
    overlap: [usize; 3],
    conn: Connectivity,
) -> Result<FragmentationReport> {
    let cfg = LpaConfig::new(conn, Schedule::RasterSweeps);
    let global = run_lpa(semantic, &cfg)?;
    let (tiles, index) = tile(semantic, tile_size, overlap)?;
    let local: Vec<LabeledVolume> = tiles
        .par_iter()
        .map(|t| run_lpa(t, &cfg).map(|r| r.instances))
        .collect::<Result<_>>()?;

    // piece_owner[t][local id] = global id of that piece, 0 if it owns no voxel
    let mut piece_owner: Vec<Vec<u64>> = local.iter().map(|v| vec![0; v.max_label() as usize + 1]).collect();
    let owners = index.owners();
    let dims = semantic.dims();
    let size = index.tile_dims();
    let global_ids = global.instances.data();
    for (i, &g) in global_ids.iter().enumerate() {
        if g == 0 {
            continue;
        }
        let p = dims.coord(i);
        let (t, [lz, ly, lx]) = owners.owner(p.as_array());
        let piece = local[t].data()[(lz * size.y + ly) * size.x + lx] as usize;
        piece_owner[t][piece] = g;
    }

    let mut per_instance_fragments: BTreeMap<u64, u64> =
        (1..=global.num_instances).map(|g| (g, 0)).collect();
    let mut after = 0;
    for &g in piece_owner.iter().flat_map(|p| p.iter().skip(1)) {
        if g != 0 {
            after += 1;
            *per_instance_fragments.get_mut(&g).expect("global id") += 1;
        }
    }
    let split_instances = per_instance_fragments.values().filter(|&&n| n >= 2).count() as u64;
    Ok(FragmentationReport {
        instances_global: global.num_instances,
        instances_after_tiling: after,
        split_instances,
        per_instance_fragments,
    })
}

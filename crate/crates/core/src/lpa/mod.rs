//! Connectivity-aware label propagation over 3D semantic volumes.
//!
//! Every foreground voxel starts with a unique label (its linear index plus
//! one). Each step replaces a voxel's label with the minimum over itself and
//! its adjacent foreground voxels, until nothing changes. At the fixed point
//! every connected component carries the smallest initial label found inside
//! it; [`compact_labels`] then renumbers those representatives to `1..=K`.
//!
//! Two schedules reach the same fixed point:
//!
//! * [`Schedule::Synchronous`] computes every step from the previous buffer
//!   into a fresh one (the literal update rule). Needs a number of steps
//!   proportional to the longest geodesic path inside a component.
//! * [`Schedule::RasterSweeps`] updates in place with a forward raster pass
//!   followed by a backward pass. Every intermediate value is still a label
//!   of the same component and never below its minimum, so the fixed point
//!   is identical; elongated objects converge in a handful of passes.

mod oracle;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

pub use oracle::{ccl_oracle, DisjointSets};

use crate::error::{Error, Result};
use crate::volume::{Connectivity, Dims, LabeledVolume, Role, Stencil};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    Synchronous,
    #[default]
    RasterSweeps,
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schedule::Synchronous => "sync",
            Schedule::RasterSweeps => "sweeps",
        })
    }
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sync" | "synchronous" => Ok(Schedule::Synchronous),
            "sweeps" | "raster" | "raster_sweeps" => Ok(Schedule::RasterSweeps),
            _ => Err(Error::InvalidParameter(format!(
                "schedule must be sync or sweeps, got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LpaConfig {
    pub connectivity: Connectivity,
    pub schedule: Schedule,
    /// Upper bound on propagation iterations. A synchronous run never needs
    /// more iterations than there are foreground voxels.
    pub max_iterations: usize,
}

impl Default for LpaConfig {
    fn default() -> Self {
        LpaConfig {
            connectivity: Connectivity::C26,
            schedule: Schedule::RasterSweeps,
            max_iterations: usize::MAX,
        }
    }
}

impl LpaConfig {
    pub fn new(connectivity: Connectivity, schedule: Schedule) -> Self {
        LpaConfig {
            connectivity,
            schedule,
            ..LpaConfig::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter(
                "max_iterations must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpaResult {
    /// Instance volume with labels `0..=num_instances`.
    pub instances: LabeledVolume,
    pub num_instances: u64,
    /// Propagation steps executed, including the final one that changed
    /// nothing. For raster sweeps one iteration is a forward plus a backward
    /// pass. Zero when the input has no foreground.
    pub iterations_used: usize,
    pub converged: bool,
}

/// Which foreground neighbors may exchange labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Linkage {
    /// Any two adjacent foreground voxels, regardless of class.
    Foreground,
    /// Only adjacent voxels carrying the same semantic class.
    SameClass,
}

/// Unique initial labels: `linear_index + 1` on foreground, 0 elsewhere.
pub fn init_labels(semantic: &LabeledVolume) -> Result<LabeledVolume> {
    semantic.require_role(&[Role::Semantic, Role::Binary], "semantic or binary")?;
    Ok(LabeledVolume::from_parts_unchecked(
        semantic.dims(),
        semantic.voxel_size(),
        Role::Instance,
        initial_buffer(semantic.data()),
    ))
}

fn initial_buffer(semantic: &[u64]) -> Vec<u64> {
    semantic
        .par_iter()
        .enumerate()
        .map(|(i, &s)| if s != 0 { i as u64 + 1 } else { 0 })
        .collect()
}

/// One synchronous update. Returns the next label volume and how many voxels
/// changed.
pub fn propagate_step(
    labels: &LabeledVolume,
    semantic: &LabeledVolume,
    conn: Connectivity,
) -> Result<(LabeledVolume, usize)> {
    labels.require_same_dims(semantic.dims())?;
    let dims = labels.dims();
    let stencil = Stencil::new(dims, conn);
    let mut next = vec![0u64; dims.len()];
    let changed = sync_step(
        Linkage::Foreground,
        semantic.data(),
        labels.data(),
        &mut next,
        dims,
        &stencil,
    );
    Ok((
        LabeledVolume::from_parts_unchecked(dims, labels.voxel_size(), labels.role(), next),
        changed,
    ))
}

fn sync_step(
    linkage: Linkage,
    semantic: &[u64],
    src: &[u64],
    dst: &mut [u64],
    dims: Dims,
    stencil: &Stencil,
) -> usize {
    match linkage {
        Linkage::Foreground => sync_step_impl::<false>(semantic, src, dst, dims, stencil),
        Linkage::SameClass => sync_step_impl::<true>(semantic, src, dst, dims, stencil),
    }
}

#[inline(always)]
fn linked<const SAME_CLASS: bool>(center_class: u64, neighbor_class: u64) -> bool {
    if SAME_CLASS {
        neighbor_class == center_class
    } else {
        neighbor_class != 0
    }
}

fn sync_step_impl<const SAME_CLASS: bool>(
    semantic: &[u64],
    src: &[u64],
    dst: &mut [u64],
    dims: Dims,
    stencil: &Stencil,
) -> usize {
    let plane = dims.plane();
    dst.par_chunks_mut(plane)
        .enumerate()
        .map(|(z, slice)| {
            let mut changed = 0;
            for y in 0..dims.y {
                for x in 0..dims.x {
                    let local = y * dims.x + x;
                    let idx = z * plane + local;
                    let class = semantic[idx];
                    if class == 0 {
                        slice[local] = 0;
                        continue;
                    }
                    let own = src[idx];
                    let mut m = own;
                    stencil.for_each(idx, z, y, x, |q| {
                        if linked::<SAME_CLASS>(class, semantic[q]) {
                            m = m.min(src[q]);
                        }
                    });
                    if m != own {
                        changed += 1;
                    }
                    slice[local] = m;
                }
            }
            changed
        })
        .sum()
}

/// In-place forward then backward raster pass. Returns the number of label
/// decreases.
fn sweep_pair<const SAME_CLASS: bool>(
    semantic: &[u64],
    labels: &mut [u64],
    dims: Dims,
    stencil: &Stencil,
) -> usize {
    let mut changed = 0;
    let mut visit = |idx: usize, z: usize, y: usize, x: usize, labels: &mut [u64]| {
        let class = semantic[idx];
        if class == 0 {
            return;
        }
        let own = labels[idx];
        let mut m = own;
        stencil.for_each(idx, z, y, x, |q| {
            if linked::<SAME_CLASS>(class, semantic[q]) {
                m = m.min(labels[q]);
            }
        });
        if m < own {
            labels[idx] = m;
            changed += 1;
        }
    };

    let mut idx = 0;
    for z in 0..dims.z {
        for y in 0..dims.y {
            for x in 0..dims.x {
                visit(idx, z, y, x, labels);
                idx += 1;
            }
        }
    }
    for z in (0..dims.z).rev() {
        for y in (0..dims.y).rev() {
            for x in (0..dims.x).rev() {
                idx -= 1;
                visit(idx, z, y, x, labels);
            }
        }
    }
    changed
}

/// Converts a semantic (or binary) volume into instance labels, one label
/// per connected foreground component under `cfg.connectivity`.
pub fn run_lpa(semantic: &LabeledVolume, cfg: &LpaConfig) -> Result<LpaResult> {
    semantic.require_role(&[Role::Semantic, Role::Binary], "semantic or binary")?;
    let (instances, num_instances, iterations_used, _) = propagate_to_fixed_point(
        semantic,
        cfg,
        Linkage::Foreground,
    )?;
    Ok(LpaResult {
        instances,
        num_instances,
        iterations_used,
        converged: true,
    })
}

/// Fixed point followed by compaction. Also returns the semantic class of
/// every representative, in compacted-id order.
fn propagate_to_fixed_point(
    semantic: &LabeledVolume,
    cfg: &LpaConfig,
    linkage: Linkage,
) -> Result<(LabeledVolume, u64, usize, Vec<u64>)> {
    cfg.validate()?;
    let dims = semantic.dims();
    let sem = semantic.data();
    let mut labels = initial_buffer(sem);
    let has_foreground = sem.iter().any(|&s| s != 0);
    let stencil = Stencil::new(dims, cfg.connectivity);

    let mut iterations = 0;
    if has_foreground {
        match cfg.schedule {
            Schedule::Synchronous => {
                let mut next = vec![0u64; labels.len()];
                loop {
                    let changed = sync_step(linkage, sem, &labels, &mut next, dims, &stencil);
                    std::mem::swap(&mut labels, &mut next);
                    iterations += 1;
                    if changed == 0 {
                        break;
                    }
                    if iterations >= cfg.max_iterations {
                        return Err(Error::NotConverged { iterations });
                    }
                }
            }
            Schedule::RasterSweeps => loop {
                let changed = match linkage {
                    Linkage::Foreground => sweep_pair::<false>(sem, &mut labels, dims, &stencil),
                    Linkage::SameClass => sweep_pair::<true>(sem, &mut labels, dims, &stencil),
                };
                iterations += 1;
                if changed == 0 {
                    break;
                }
                if iterations >= cfg.max_iterations {
                    return Err(Error::NotConverged { iterations });
                }
            },
        }
    }

    let classes = compact_representatives(&mut labels, sem);
    let k = classes.len() as u64;
    let volume =
        LabeledVolume::from_parts_unchecked(dims, semantic.voxel_size(), Role::Instance, labels);
    Ok((volume, k, iterations, classes))
}

/// Renumbers a propagation fixed point in place. At the fixed point each
/// component's label is `r = i + 1` where `i` is its smallest linear index,
/// so a single ascending scan visits every representative before any other
/// member and can look the new id up at `labels[r - 1]`.
fn compact_representatives(labels: &mut [u64], semantic: &[u64]) -> Vec<u64> {
    let mut classes = Vec::new();
    for i in 0..labels.len() {
        let r = labels[i];
        if r == 0 {
            continue;
        }
        let r = r as usize;
        if r == i + 1 {
            classes.push(semantic[i]);
            labels[i] = classes.len() as u64;
        } else {
            debug_assert!(r <= i);
            labels[i] = labels[r - 1];
        }
    }
    classes
}

/// Order-preserving renumbering of the distinct nonzero labels to `1..=K`.
pub fn compact_labels(labels: &LabeledVolume) -> (LabeledVolume, u64) {
    let (data, k) = compact_slice(labels.data());
    (
        LabeledVolume::from_parts_unchecked(labels.dims(), labels.voxel_size(), labels.role(), data),
        k,
    )
}

pub(crate) fn compact_slice(data: &[u64]) -> (Vec<u64>, u64) {
    let mut distinct: Vec<u64> = data
        .iter()
        .copied()
        .filter(|&v| v != 0)
        .collect::<std::collections::HashSet<_>>()
        .into_iter()
        .collect();
    distinct.sort_unstable();
    let remap: HashMap<u64, u64> = distinct
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, i as u64 + 1))
        .collect();
    let out = data
        .iter()
        .map(|&v| if v == 0 { 0 } else { remap[&v] })
        .collect();
    (out, distinct.len() as u64)
}

/// Instance labels computed separately for every semantic class: voxels of
/// different classes are never merged even when they touch. Ids are globally
/// unique, ordered by the first voxel of each instance in raster order.
pub fn per_class_instances(
    semantic: &LabeledVolume,
    cfg: &LpaConfig,
) -> Result<(LabeledVolume, BTreeMap<u64, u64>)> {
    run_lpa_per_class(semantic, cfg).map(|(r, map)| (r.instances, map))
}

/// Same as [`per_class_instances`] but also reports the iteration count.
pub fn run_lpa_per_class(
    semantic: &LabeledVolume,
    cfg: &LpaConfig,
) -> Result<(LpaResult, BTreeMap<u64, u64>)> {
    semantic.require_role(&[Role::Semantic, Role::Binary], "semantic or binary")?;
    let (instances, num_instances, iterations_used, classes) =
        propagate_to_fixed_point(semantic, cfg, Linkage::SameClass)?;
    let map = classes
        .into_iter()
        .enumerate()
        .map(|(i, c)| (i as u64 + 1, c))
        .collect();
    Ok((
        LpaResult {
            instances,
            num_instances,
            iterations_used,
            converged: true,
        },
        map,
    ))
}

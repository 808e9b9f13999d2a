//! Instance decoding from a single-class probability volume:
//! threshold, Euclidean distance transform, marker extraction and
//! marker-controlled watershed.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::instances::filter_small;
use crate::lpa::{run_lpa, LpaConfig, Schedule};
use crate::volume::{Connectivity, Dims, LabeledVolume, ProbabilityVolume, Role, Stencil};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeParams {
    /// Foreground iff probability >= threshold. Must lie in (0, 1).
    pub threshold: f64,
    /// Marker voxels reach at least this fraction of their region's peak
    /// distance. Must lie in (0, 1].
    pub marker_fraction: f64,
    pub connectivity: Connectivity,
    /// Decoded instances smaller than this are dropped.
    pub min_instance_size: u64,
    /// Measure distances in nanometers using the voxel size instead of in
    /// voxel units.
    pub anisotropic: bool,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams {
            threshold: 0.5,
            marker_fraction: 0.5,
            connectivity: Connectivity::C26,
            min_instance_size: 1,
            anisotropic: false,
        }
    }
}

impl DecodeParams {
    pub fn validate(&self) -> Result<()> {
        check_threshold(self.threshold)?;
        check_marker_fraction(self.marker_fraction)
    }
}

fn check_threshold(theta: f64) -> Result<()> {
    if theta > 0.0 && theta < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "threshold must lie in (0, 1), got {theta}"
        )))
    }
}

fn check_marker_fraction(fraction: f64) -> Result<()> {
    if fraction > 0.0 && fraction <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "marker fraction must lie in (0, 1], got {fraction}"
        )))
    }
}

/// Per-voxel distance to the nearest background voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMap {
    dims: Dims,
    data: Vec<f64>,
}

impl DistanceMap {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }
}

pub fn threshold_semantic(prob: &ProbabilityVolume, threshold: f64) -> Result<LabeledVolume> {
    check_threshold(threshold)?;
    let data = prob
        .data()
        .par_iter()
        .map(|&p| u64::from(f64::from(p) >= threshold))
        .collect();
    LabeledVolume::from_vec(prob.dims(), prob.voxel_size(), Role::Binary, data)
}

/// Exact Euclidean distance transform in voxel units. Every nonzero voxel
/// gets its distance to the nearest zero voxel of the volume. A mask with no
/// zero voxel at all is measured against the volume exterior instead, so
/// distances stay finite.
pub fn distance_transform(mask: &LabeledVolume) -> DistanceMap {
    distance_transform_with_spacing(mask, [1.0; 3])
}

/// As [`distance_transform`], with per-axis sample spacing `(z, y, x)`.
pub fn distance_transform_with_spacing(mask: &LabeledVolume, spacing: [f64; 3]) -> DistanceMap {
    let dims = mask.dims();
    let exterior = mask.data().iter().all(|&v| v != 0);
    let mut sq: Vec<f64> = mask
        .data()
        .par_iter()
        .map(|&v| if v != 0 { f64::INFINITY } else { 0.0 })
        .collect();

    // x lines are contiguous
    sq.par_chunks_mut(dims.x).for_each_init(
        || Envelope::new(dims.x),
        |env, line| {
            env.transform_in_place(line, spacing[2], exterior);
        },
    );

    // y columns stay inside one z slab
    sq.par_chunks_mut(dims.plane()).for_each_init(
        || (Envelope::new(dims.y), vec![0.0; dims.y]),
        |(env, column), slab| {
            for x in 0..dims.x {
                for y in 0..dims.y {
                    column[y] = slab[y * dims.x + x];
                }
                env.transform_in_place(column, spacing[1], exterior);
                for y in 0..dims.y {
                    slab[y * dims.x + x] = column[y];
                }
            }
        },
    );

    // z lines span slabs: compute per y row, then scatter
    let rows: Vec<Vec<f64>> = (0..dims.y)
        .into_par_iter()
        .map_init(
            || (Envelope::new(dims.z), vec![0.0; dims.z]),
            |(env, line), y| {
                let mut row = vec![0.0; dims.z * dims.x];
                for x in 0..dims.x {
                    for z in 0..dims.z {
                        line[z] = sq[z * dims.plane() + y * dims.x + x];
                    }
                    env.transform_in_place(line, spacing[0], exterior);
                    for z in 0..dims.z {
                        row[z * dims.x + x] = line[z];
                    }
                }
                row
            },
        )
        .collect();
    for (y, row) in rows.into_iter().enumerate() {
        for z in 0..dims.z {
            let dst = z * dims.plane() + y * dims.x;
            sq[dst..dst + dims.x].copy_from_slice(&row[z * dims.x..(z + 1) * dims.x]);
        }
    }

    sq.par_iter_mut().for_each(|v| *v = v.sqrt());
    DistanceMap { dims, data: sq }
}

/// Lower envelope of the parabolas `w²(q - p)² + f(p)` over the finite
/// samples of one line. With `exterior` set, zero-valued sites just outside
/// both ends join the envelope.
struct Envelope {
    sites: Vec<f64>,
    values: Vec<f64>,
    bounds: Vec<f64>,
}

impl Envelope {
    fn new(n: usize) -> Self {
        Envelope {
            sites: Vec::with_capacity(n + 2),
            values: Vec::with_capacity(n + 2),
            bounds: Vec::with_capacity(n + 2),
        }
    }

    fn transform_in_place(&mut self, f: &mut [f64], w: f64, exterior: bool) {
        let n = f.len();
        let w2 = w * w;
        self.sites.clear();
        self.values.clear();
        self.bounds.clear();

        let candidates = exterior
            .then_some((-1.0, 0.0))
            .into_iter()
            .chain(
                f.iter()
                    .enumerate()
                    .filter(|(_, v)| v.is_finite())
                    .map(|(i, &v)| (i as f64, v)),
            )
            .chain(exterior.then_some((n as f64, 0.0)));
        for (q, fq) in candidates {
            let mut s = f64::NEG_INFINITY;
            while let (Some(&p), Some(&fp), Some(&b)) =
                (self.sites.last(), self.values.last(), self.bounds.last())
            {
                s = ((fq + w2 * q * q) - (fp + w2 * p * p)) / (2.0 * w2 * (q - p));
                if s <= b {
                    self.sites.pop();
                    self.values.pop();
                    self.bounds.pop();
                    s = f64::NEG_INFINITY;
                } else {
                    break;
                }
            }
            self.sites.push(q);
            self.values.push(fq);
            self.bounds.push(s);
        }

        if self.sites.is_empty() {
            return;
        }
        let mut k = 0;
        for (q, out) in f.iter_mut().enumerate() {
            let q = q as f64;
            while k + 1 < self.sites.len() && self.bounds[k + 1] < q {
                k += 1;
            }
            let d = q - self.sites[k];
            *out = w2 * d * d + self.values[k];
        }
    }
}

/// Seeds for the watershed: voxels whose distance reaches
/// `marker_fraction` of the peak distance in their connected foreground
/// region, grouped into connected components. Regions and markers both use
/// `conn`, so a marker never straddles two regions.
pub fn extract_markers(
    dist: &DistanceMap,
    marker_fraction: f64,
    conn: Connectivity,
) -> Result<LabeledVolume> {
    check_marker_fraction(marker_fraction)?;
    let dims = dist.dims();
    let cfg = LpaConfig::new(conn, Schedule::RasterSweeps);
    let foreground: Vec<u64> = dist.data.iter().map(|&d| u64::from(d > 0.0)).collect();
    let regions = run_lpa(
        &LabeledVolume::from_parts_unchecked(dims, Default::default(), Role::Binary, foreground),
        &cfg,
    )?;

    let mut peak = vec![0.0f64; regions.num_instances as usize + 1];
    for (&r, &d) in regions.instances.data().iter().zip(&dist.data) {
        let slot = &mut peak[r as usize];
        *slot = slot.max(d);
    }
    let seeds: Vec<u64> = regions
        .instances
        .data()
        .iter()
        .zip(&dist.data)
        .map(|(&r, &d)| u64::from(r != 0 && d >= marker_fraction * peak[r as usize]))
        .collect();
    Ok(run_lpa(
        &LabeledVolume::from_parts_unchecked(dims, Default::default(), Role::Binary, seeds),
        &cfg,
    )?
    .instances)
}

#[derive(Debug, Clone, Copy)]
struct FloodEntry {
    height: f64,
    index: usize,
}

impl PartialEq for FloodEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for FloodEntry {}

impl PartialOrd for FloodEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for FloodEntry {
    // max-heap: higher distance first, then lower linear index
    fn cmp(&self, other: &Self) -> Ordering {
        self.height
            .total_cmp(&other.height)
            .then_with(|| other.index.cmp(&self.index))
    }
}

/// Priority flood from `markers` over the nonzero voxels of `mask`, visiting
/// voxels in order of decreasing distance (ties by lower linear index). A
/// voxel takes the label of the first flooded neighbor that reaches it.
/// Mask voxels not connected to any marker stay 0.
pub fn watershed(
    dist: &DistanceMap,
    markers: &LabeledVolume,
    mask: &LabeledVolume,
    conn: Connectivity,
) -> Result<LabeledVolume> {
    markers.require_same_dims(mask.dims())?;
    markers.require_same_dims(dist.dims())?;
    let dims = mask.dims();
    let in_mask = mask.data();
    let mut labels = vec![0u64; dims.len()];
    let mut heap = BinaryHeap::new();
    for (index, &m) in markers.data().iter().enumerate() {
        if m == 0 {
            continue;
        }
        if in_mask[index] == 0 {
            return Err(Error::MarkerOutsideMask { index });
        }
        labels[index] = m;
        heap.push(FloodEntry {
            height: dist.data[index],
            index,
        });
    }

    let stencil = Stencil::new(dims, conn);
    while let Some(FloodEntry { index, .. }) = heap.pop() {
        let label = labels[index];
        let p = dims.coord(index);
        stencil.for_each(index, p.z, p.y, p.x, |q| {
            if in_mask[q] != 0 && labels[q] == 0 {
                labels[q] = label;
                heap.push(FloodEntry {
                    height: dist.data[q],
                    index: q,
                });
            }
        });
    }
    LabeledVolume::from_vec(dims, mask.voxel_size(), Role::Instance, labels)
}

/// Threshold, distance transform, markers, watershed, then small-object
/// removal. Output ids are `1..=K`.
pub fn decode_instances(prob: &ProbabilityVolume, params: &DecodeParams) -> Result<LabeledVolume> {
    params.validate()?;
    let mask = threshold_semantic(prob, params.threshold)?;
    let dist = if params.anisotropic {
        distance_transform_with_spacing(&mask, prob.voxel_size().as_array())
    } else {
        distance_transform(&mask)
    };
    let markers = extract_markers(&dist, params.marker_fraction, params.connectivity)?;
    let flooded = watershed(&dist, &markers, &mask, params.connectivity)?;
    filter_small(&flooded, params.min_instance_size)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary(dims: [usize; 3], data: Vec<u64>) -> LabeledVolume {
        LabeledVolume::from_shape(dims, Role::Binary, data).unwrap()
    }

    #[test]
    fn threshold_examples() {
        let p = ProbabilityVolume::from_shape([1, 1, 3], vec![0.4, 0.5, 0.6]).unwrap();
        assert_eq!(threshold_semantic(&p, 0.5).unwrap().data(), &[0, 1, 1]);
        let p = ProbabilityVolume::from_shape([1, 1, 2], vec![0.0, 0.0]).unwrap();
        assert_eq!(threshold_semantic(&p, 0.5).unwrap().data(), &[0, 0]);
        let p = ProbabilityVolume::from_shape([1, 1, 2], vec![1.0, 1.0]).unwrap();
        assert_eq!(threshold_semantic(&p, 0.5).unwrap().data(), &[1, 1]);
        for bad in [0.0, 1.0, 1.5, -0.1, f64::NAN] {
            assert!(threshold_semantic(&p, bad).is_err());
        }
    }

    #[test]
    fn distance_examples() {
        let mut data = vec![0u64; 27];
        data[13] = 1;
        let d = distance_transform(&binary([3, 3, 3], data));
        assert_eq!(d.data()[13], 1.0);
        assert_eq!(d.data().iter().filter(|&&v| v != 0.0).count(), 1);

        let d = distance_transform(&binary([2, 2, 2], vec![0; 8]));
        assert!(d.data().iter().all(|&v| v == 0.0));

        let d = distance_transform(&binary([1, 1, 5], vec![0, 1, 1, 1, 0]));
        assert_eq!(d.data(), &[0.0, 1.0, 2.0, 1.0, 0.0]);

        let d = distance_transform(&binary([1, 1, 4], vec![0, 1, 1, 1]));
        assert_eq!(d.data(), &[0.0, 1.0, 2.0, 3.0]);

        // without any background the exterior is used
        let d = distance_transform(&binary([1, 1, 1], vec![1]));
        assert_eq!(d.data(), &[1.0]);
        let d = distance_transform(&binary([1, 1, 4], vec![1; 4]));
        assert_eq!(d.data(), &[1.0, 1.0, 1.0, 1.0]);
        let d = distance_transform(&binary([5, 5, 5], vec![1; 125]));
        assert_eq!(d.max(), 3.0);
    }

    #[test]
    fn anisotropic_spacing_scales_distances() {
        let mask = binary([1, 1, 5], vec![0, 1, 1, 1, 0]);
        let d = distance_transform_with_spacing(&mask, [1.0, 1.0, 4.0]);
        assert_eq!(d.data(), &[0.0, 4.0, 8.0, 4.0, 0.0]);
        let mask = binary([1, 2, 2], vec![0, 1, 1, 1]);
        let d = distance_transform_with_spacing(&mask, [1.0, 3.0, 4.0]);
        assert_eq!(d.data(), &[0.0, 4.0, 3.0, 5.0]);
    }

    #[test]
    fn marker_parameters_validated() {
        let d = distance_transform(&binary([1, 1, 3], vec![0, 1, 0]));
        assert!(extract_markers(&d, 0.0, Connectivity::C26).is_err());
        assert!(extract_markers(&d, 1.5, Connectivity::C26).is_err());
        assert_eq!(extract_markers(&d, 1.0, Connectivity::C26).unwrap().data(), &[0, 1, 0]);
    }

    #[test]
    fn empty_mask_has_no_markers() {
        let d = distance_transform(&binary([2, 2, 2], vec![0; 8]));
        let m = extract_markers(&d, 0.5, Connectivity::C26).unwrap();
        assert!(m.data().iter().all(|&v| v == 0));
    }

    #[test]
    fn watershed_single_marker_fills_mask() {
        let mask = binary([1, 2, 3], vec![1, 1, 1, 1, 1, 0]);
        let dist = distance_transform(&mask);
        let markers = LabeledVolume::from_shape([1, 2, 3], Role::Instance, vec![0, 0, 0, 7, 0, 0])
            .unwrap();
        let ws = watershed(&dist, &markers, &mask, Connectivity::C6).unwrap();
        assert_eq!(ws.data(), &[7, 7, 7, 7, 7, 0]);
    }

    #[test]
    fn watershed_identity_flood() {
        let mask = binary([1, 1, 4], vec![1, 1, 0, 1]);
        let markers =
            LabeledVolume::from_shape([1, 1, 4], Role::Instance, vec![1, 2, 0, 3]).unwrap();
        let ws = watershed(&distance_transform(&mask), &markers, &mask, Connectivity::C26).unwrap();
        assert_eq!(ws.data(), markers.data());
    }

    #[test]
    fn watershed_rejects_marker_outside_mask() {
        let mask = binary([1, 1, 3], vec![1, 1, 0]);
        let markers =
            LabeledVolume::from_shape([1, 1, 3], Role::Instance, vec![0, 0, 1]).unwrap();
        assert!(matches!(
            watershed(&distance_transform(&mask), &markers, &mask, Connectivity::C6),
            Err(Error::MarkerOutsideMask { index: 2 })
        ));
    }

    #[test]
    fn decode_all_zero() {
        let p = ProbabilityVolume::from_shape([2, 3, 3], vec![0.0; 18]).unwrap();
        let out = decode_instances(&p, &DecodeParams::default()).unwrap();
        assert_eq!(out.max_label(), 0);
        let bad = DecodeParams {
            threshold: 1.5,
            ..DecodeParams::default()
        };
        assert!(decode_instances(&p, &bad).is_err());
    }
}

//! Instance census: voxel counts, size classes, histograms and small-object
//! suppression.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::lpa::compact_slice;
use crate::volume::{LabeledVolume, Role};

/// Instances below this many voxels are small.
pub const SMALL_BELOW: u64 = 5_000;
/// Instances above this many voxels are large.
pub const LARGE_ABOVE: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SizeClass {
    Small,
    Medium,
    Large,
}

impl SizeClass {
    /// `< 5000` small, `5000..=10000` medium, `> 10000` large.
    pub fn of(count: u64) -> Result<Self> {
        match count {
            0 => Err(Error::InvalidParameter(
                "an instance must contain at least one voxel".into(),
            )),
            c if c < SMALL_BELOW => Ok(SizeClass::Small),
            c if c <= LARGE_ABOVE => Ok(SizeClass::Medium),
            _ => Ok(SizeClass::Large),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SizeClass::Small => "small",
            SizeClass::Medium => "medium",
            SizeClass::Large => "large",
        }
    }
}

impl fmt::Display for SizeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Voxel count for every nonzero label.
pub fn instance_sizes(instances: &LabeledVolume) -> BTreeMap<u64, u64> {
    let mut sizes = BTreeMap::new();
    for &v in instances.data() {
        if v != 0 {
            *sizes.entry(v).or_insert(0) += 1;
        }
    }
    sizes
}

/// Counts per half-open bin `[edges[i], edges[i + 1])`. Sizes outside
/// `[edges[0], edges[last])` are not counted.
pub fn size_histogram(sizes: &BTreeMap<u64, u64>, edges: &[f64]) -> Result<Vec<u64>> {
    if edges.len() < 2 {
        return Err(Error::InvalidParameter(
            "a histogram needs at least two bin edges".into(),
        ));
    }
    if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter(
            "bin edges must be finite and strictly ascending".into(),
        ));
    }
    let mut counts = vec![0u64; edges.len() - 1];
    for &size in sizes.values() {
        let s = size as f64;
        // index of the first edge strictly greater than s
        let upper = edges.partition_point(|&e| e <= s);
        if upper == 0 || upper == edges.len() {
            continue;
        }
        counts[upper - 1] += 1;
    }
    Ok(counts)
}

/// `bins + 1` geometrically spaced edges from `min` to `max`.
pub fn log_spaced_edges(min: f64, max: f64, bins: usize) -> Result<Vec<f64>> {
    if !(min > 0.0 && max > min && max.is_finite()) || bins == 0 {
        return Err(Error::InvalidParameter(format!(
            "log-spaced edges need 0 < min < max and at least one bin, got min={min}, max={max}, bins={bins}"
        )));
    }
    let (lo, hi) = (min.ln(), max.ln());
    let step = (hi - lo) / bins as f64;
    let mut edges: Vec<f64> = (0..=bins).map(|i| (lo + step * i as f64).exp()).collect();
    edges[0] = min;
    edges[bins] = max;
    Ok(edges)
}

/// Drops instances with fewer than `min_size` voxels and renumbers the
/// survivors to `1..=K'` in ascending order of their old ids.
pub fn filter_small(instances: &LabeledVolume, min_size: u64) -> Result<LabeledVolume> {
    instances.require_role(&[Role::Instance], "instance")?;
    let sizes = instance_sizes(instances);
    let kept: Vec<u64> = instances
        .data()
        .iter()
        .map(|&v| if v != 0 && sizes[&v] >= min_size { v } else { 0 })
        .collect();
    let (data, _) = compact_slice(&kept);
    LabeledVolume::from_vec(instances.dims(), instances.voxel_size(), Role::Instance, data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceReport {
    pub sizes: BTreeMap<u64, u64>,
    pub classes: Option<BTreeMap<u64, u64>>,
    pub size_class: BTreeMap<u64, SizeClass>,
    pub total_instances: u64,
}

impl InstanceReport {
    /// Census of a compact instance volume (ids exactly `1..=K`).
    pub fn from_volume(
        instances: &LabeledVolume,
        classes: Option<&BTreeMap<u64, u64>>,
    ) -> Result<Self> {
        instances.require_role(&[Role::Instance], "instance")?;
        let sizes = instance_sizes(instances);
        for (expected, &id) in (1u64..).zip(sizes.keys()) {
            if id != expected {
                return Err(Error::NotCompact {
                    expected: sizes.len() as u64,
                    found: id,
                });
            }
        }
        if let Some(map) = classes {
            if let Some(&id) = sizes.keys().find(|id| !map.contains_key(id)) {
                return Err(Error::UnmappedInstance(id));
            }
        }
        let size_class = sizes
            .iter()
            .map(|(&id, &n)| Ok((id, SizeClass::of(n)?)))
            .collect::<Result<_>>()?;
        Ok(InstanceReport {
            total_instances: sizes.len() as u64,
            classes: classes.map(|m| {
                m.iter()
                    .filter(|(id, _)| sizes.contains_key(id))
                    .map(|(&k, &v)| (k, v))
                    .collect()
            }),
            size_class,
            sizes,
        })
    }

    pub fn total_voxels(&self) -> u64 {
        self.sizes.values().sum()
    }

    /// Number of instances per size class, in small/medium/large order.
    pub fn size_class_counts(&self) -> [u64; 3] {
        let mut counts = [0; 3];
        for c in self.size_class.values() {
            counts[*c as usize] += 1;
        }
        counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(dims: [usize; 3], data: Vec<u64>) -> LabeledVolume {
        LabeledVolume::from_shape(dims, Role::Instance, data).unwrap()
    }

    #[test]
    fn size_examples() {
        assert_eq!(
            instance_sizes(&inst([1, 1, 4], vec![1, 0, 2, 2])),
            BTreeMap::from([(1, 1), (2, 2)])
        );
        assert!(instance_sizes(&inst([1, 1, 2], vec![0, 0])).is_empty());
    }

    #[test]
    fn size_class_thresholds() {
        assert_eq!(SizeClass::of(1).unwrap(), SizeClass::Small);
        assert_eq!(SizeClass::of(4999).unwrap(), SizeClass::Small);
        assert_eq!(SizeClass::of(5000).unwrap(), SizeClass::Medium);
        assert_eq!(SizeClass::of(10000).unwrap(), SizeClass::Medium);
        assert_eq!(SizeClass::of(10001).unwrap(), SizeClass::Large);
        assert!(SizeClass::of(0).is_err());
    }

    #[test]
    fn histogram_examples() {
        let edges = [0.0, 15.0, 30.0];
        let sizes = BTreeMap::from([(1, 10), (2, 20)]);
        assert_eq!(size_histogram(&sizes, &edges).unwrap(), vec![1, 1]);
        assert_eq!(size_histogram(&BTreeMap::new(), &edges).unwrap(), vec![0, 0]);
        assert_eq!(size_histogram(&BTreeMap::from([(1, 15)]), &edges).unwrap(), vec![0, 1]);
        // upper edge is exclusive
        assert_eq!(size_histogram(&BTreeMap::from([(1, 30)]), &edges).unwrap(), vec![0, 0]);
        assert!(size_histogram(&sizes, &[0.0, 10.0, 10.0]).is_err());
        assert!(size_histogram(&sizes, &[1.0]).is_err());
    }

    #[test]
    fn log_edges() {
        let e = log_spaced_edges(1.0, 1000.0, 3).unwrap();
        assert_eq!(e.len(), 4);
        assert_eq!((e[0], e[3]), (1.0, 1000.0));
        assert!((e[1] - 10.0).abs() < 1e-9 && (e[2] - 100.0).abs() < 1e-9);
        assert!(log_spaced_edges(0.0, 10.0, 2).is_err());
    }

    #[test]
    fn filter_examples() {
        let mut data = vec![2u64; 50];
        data.push(1);
        let v = inst([1, 1, 51], data);
        let f = filter_small(&v, 10).unwrap();
        assert_eq!(instance_sizes(&f), BTreeMap::from([(1, 50)]));
        assert_eq!(f.data()[50], 0);

        let v = inst([1, 1, 4], vec![3, 0, 7, 7]);
        assert_eq!(filter_small(&v, 1).unwrap().data(), &[1, 0, 2, 2]);
        assert!(filter_small(&v, 100).unwrap().data().iter().all(|&x| x == 0));
    }

    #[test]
    fn report_requires_compact_ids() {
        let v = inst([1, 1, 4], vec![1, 0, 3, 3]);
        assert!(matches!(
            InstanceReport::from_volume(&v, None),
            Err(Error::NotCompact { .. })
        ));
        let v = inst([1, 1, 4], vec![1, 0, 2, 2]);
        let r = InstanceReport::from_volume(&v, None).unwrap();
        assert_eq!(r.total_instances, 2);
        assert_eq!(r.total_voxels(), 3);
        assert_eq!(r.size_class_counts(), [2, 0, 0]);
        assert!(matches!(
            InstanceReport::from_volume(&v, Some(&BTreeMap::from([(1, 1)]))),
            Err(Error::UnmappedInstance(2))
        ));
    }
}

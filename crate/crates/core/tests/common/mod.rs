#![allow(dead_code)]

use std::collections::VecDeque;

use emlabel::{Connectivity, LabeledVolume, ProbabilityVolume, Role};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_mask(rng: &mut ChaCha8Rng, dims: [usize; 3], density: f64) -> LabeledVolume {
    let n = dims.iter().product();
    let data = (0..n).map(|_| u64::from(rng.random_bool(density))).collect();
    LabeledVolume::from_shape(dims, Role::Semantic, data).unwrap()
}

/// Foreground with probability `density`, class drawn from `1..=classes`.
pub fn random_semantic(
    rng: &mut ChaCha8Rng,
    dims: [usize; 3],
    density: f64,
    classes: u64,
) -> LabeledVolume {
    let n = dims.iter().product();
    let data = (0..n)
        .map(|_| {
            if rng.random_bool(density) {
                rng.random_range(1..=classes)
            } else {
                0
            }
        })
        .collect();
    LabeledVolume::from_shape(dims, Role::Semantic, data).unwrap()
}

/// Neighbor offsets by Manhattan norm: 1 for faces, 2 adds edges, 3 adds
/// corners.
pub fn offsets(conn: Connectivity) -> Vec<[i64; 3]> {
    let max_norm = match conn {
        Connectivity::C6 => 1,
        Connectivity::C18 => 2,
        Connectivity::C26 => 3,
    };
    let mut out = Vec::new();
    for dz in -1i64..=1 {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let norm = dz.abs() + dy.abs() + dx.abs();
                if norm > 0 && norm <= max_norm {
                    out.push([dz, dy, dx]);
                }
            }
        }
    }
    out
}

/// Breadth-first component labeling. `same_class` keeps different nonzero
/// values apart. Ids follow first appearance in raster order.
pub fn bfs_labels(vol: &LabeledVolume, conn: Connectivity, same_class: bool) -> Vec<u64> {
    let [dz, dy, dx] = vol.dims().as_array();
    let data = vol.data();
    let offs = offsets(conn);
    let mut out = vec![0u64; data.len()];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for start in 0..data.len() {
        if data[start] == 0 || out[start] != 0 {
            continue;
        }
        next += 1;
        out[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (z, y, x) = ((i / (dy * dx)) as i64, ((i / dx) % dy) as i64, (i % dx) as i64);
            for o in &offs {
                let (nz, ny, nx) = (z + o[0], y + o[1], x + o[2]);
                if nz < 0 || ny < 0 || nx < 0 || nz >= dz as i64 || ny >= dy as i64 || nx >= dx as i64 {
                    continue;
                }
                let j = (nz as usize * dy + ny as usize) * dx + nx as usize;
                let linked = if same_class {
                    data[j] == data[i]
                } else {
                    data[j] != 0
                };
                if linked && out[j] == 0 {
                    out[j] = next;
                    queue.push_back(j);
                }
            }
        }
    }
    out
}

/// Minimum Euclidean distance to any zero voxel, by exhaustive search.
pub fn brute_edt(mask: &LabeledVolume, spacing: [f64; 3]) -> Vec<f64> {
    let [_, dy, dx] = mask.dims().as_array();
    let coord = |i: usize| [i / (dy * dx), (i / dx) % dy, i % dx];
    let data = mask.data();
    let background: Vec<[usize; 3]> = (0..data.len()).filter(|&i| data[i] == 0).map(coord).collect();
    (0..data.len())
        .map(|i| {
            if data[i] == 0 {
                return 0.0;
            }
            let p = coord(i);
            background
                .iter()
                .map(|q| {
                    (0..3)
                        .map(|k| {
                            let d = (p[k] as f64 - q[k] as f64) * spacing[k];
                            d * d
                        })
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

/// Union of solid balls, 0.9 inside and 0.05 outside.
pub fn balls(dims: [usize; 3], balls: &[([f64; 3], f64)]) -> ProbabilityVolume {
    let [dz, dy, dx] = dims;
    let mut data = Vec::with_capacity(dz * dy * dx);
    for z in 0..dz {
        for y in 0..dy {
            for x in 0..dx {
                let p = [z as f64, y as f64, x as f64];
                let inside = balls.iter().any(|(c, r)| {
                    (0..3).map(|k| (p[k] - c[k]).powi(2)).sum::<f64>() <= r * r
                });
                data.push(if inside { 0.9 } else { 0.05 });
            }
        }
    }
    ProbabilityVolume::from_shape(dims, data).unwrap()
}

/// 2 to 5 random balls, often touching.
pub fn random_balls(rng: &mut ChaCha8Rng, dims: [usize; 3]) -> ProbabilityVolume {
    let n = rng.random_range(2..=5);
    let spec: Vec<([f64; 3], f64)> = (0..n)
        .map(|_| {
            let r = rng.random_range(2.0..4.5);
            let c = dims.map(|d| rng.random_range(0.0..d as f64));
            (c, r)
        })
        .collect();
    balls(dims, &spec)
}

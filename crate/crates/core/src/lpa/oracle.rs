//! Classical two-pass union-find labeling, used to cross-check propagation.

use crate::error::Result;
use crate::lpa::LpaResult;
use crate::volume::{Connectivity, LabeledVolume, Role};

/// Disjoint-set forest with union by size and path halving.
#[derive(Debug, Clone)]
pub struct DisjointSets {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSets {
    pub fn new(len: usize) -> Self {
        DisjointSets {
            parent: (0..len).collect(),
            size: vec![1; len],
        }
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            let grandparent = self.parent[self.parent[i]];
            self.parent[i] = grandparent;
            i = grandparent;
        }
        i
    }

    /// Merges the sets holding `a` and `b`; returns the new root.
    pub fn union(&mut self, a: usize, b: usize) -> usize {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return ra;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        ra
    }

    pub fn same_set(&mut self, a: usize, b: usize) -> bool {
        self.find(a) == self.find(b)
    }
}

/// Connected components of the foreground by union-find.
///
/// First pass unions every foreground voxel with its already-visited
/// foreground neighbors; second pass numbers components in order of their
/// first voxel in raster order, which matches the compaction order of
/// [`crate::lpa::run_lpa`].
pub fn ccl_oracle(semantic: &LabeledVolume, conn: Connectivity) -> Result<LpaResult> {
    let dims = semantic.dims();
    let (dz_n, dy_n, dx_n) = (dims.z as isize, dims.y as isize, dims.x as isize);
    let data = semantic.data();
    let mut sets = DisjointSets::new(data.len());

    let backward: Vec<[isize; 3]> = conn
        .offsets()
        .iter()
        .map(|o| [o[0] as isize, o[1] as isize, o[2] as isize])
        .filter(|&[dz, dy, dx]| (dz, dy, dx) < (0, 0, 0))
        .collect();

    for z in 0..dz_n {
        for y in 0..dy_n {
            for x in 0..dx_n {
                let p = ((z * dy_n + y) * dx_n + x) as usize;
                if data[p] == 0 {
                    continue;
                }
                for &[dz, dy, dx] in &backward {
                    let (qz, qy, qx) = (z + dz, y + dy, x + dx);
                    if qz < 0 || qy < 0 || qx < 0 || qz >= dz_n || qy >= dy_n || qx >= dx_n {
                        continue;
                    }
                    let q = ((qz * dy_n + qy) * dx_n + qx) as usize;
                    if data[q] != 0 {
                        sets.union(p, q);
                    }
                }
            }
        }
    }

    let mut id_of_root = vec![0u64; data.len()];
    let mut next = 0u64;
    let mut out = vec![0u64; data.len()];
    for p in 0..data.len() {
        if data[p] == 0 {
            continue;
        }
        let root = sets.find(p);
        if id_of_root[root] == 0 {
            next += 1;
            id_of_root[root] = next;
        }
        out[p] = id_of_root[root];
    }

    Ok(LpaResult {
        instances: LabeledVolume::from_vec(dims, semantic.voxel_size(), Role::Instance, out)?,
        num_instances: next,
        iterations_used: 0,
        converged: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disjoint_sets_basics() {
        let mut s = DisjointSets::new(5);
        assert!(!s.same_set(0, 1));
        s.union(0, 1);
        s.union(3, 4);
        assert!(s.same_set(1, 0));
        assert!(!s.same_set(1, 3));
        s.union(1, 4);
        assert!(s.same_set(0, 3));
        assert!(!s.same_set(2, 0));
        assert_eq!(s.len(), 5);
    }

    #[test]
    fn oracle_examples() {
        let s = LabeledVolume::from_shape([1, 1, 3], Role::Semantic, vec![1, 0, 1]).unwrap();
        assert_eq!(ccl_oracle(&s, Connectivity::C6).unwrap().num_instances, 2);
        let s = LabeledVolume::from_shape([3, 3, 3], Role::Semantic, vec![1; 27]).unwrap();
        for conn in Connectivity::ALL {
            assert_eq!(ccl_oracle(&s, conn).unwrap().num_instances, 1);
        }
    }
}

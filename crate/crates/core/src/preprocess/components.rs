//! Connected-component labeling on binary 3D grids.
//!
//! Two-pass raster labeling with a union-find over provisional labels.
//! Final labels are numbered by the linear index of each component's first
//! voxel, so label 1 always owns the smallest foreground index.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Connectivity {
    /// Face neighbors only.
    Six,
    /// Face, edge and corner neighbors.
    TwentySix,
}

impl Connectivity {
    /// Neighbor offsets that precede a voxel in raster (x-fastest) order.
    fn backward_offsets(self) -> &'static [(isize, isize, isize)] {
        const SIX: [(isize, isize, isize); 3] = [(-1, 0, 0), (0, -1, 0), (0, 0, -1)];
        const TWENTY_SIX: [(isize, isize, isize); 13] = [
            (-1, -1, -1),
            (0, -1, -1),
            (1, -1, -1),
            (-1, 0, -1),
            (0, 0, -1),
            (1, 0, -1),
            (-1, 1, -1),
            (0, 1, -1),
            (1, 1, -1),
            (-1, -1, 0),
            (0, -1, 0),
            (1, -1, 0),
            (-1, 0, 0),
        ];
        match self {
            Connectivity::Six => &SIX,
            Connectivity::TwentySix => &TWENTY_SIX,
        }
    }
}

/// Component labels for every voxel; 0 marks background.
#[derive(Clone, Debug)]
pub struct Labeling {
    pub labels: Vec<u32>,
    /// Voxel count of component `l` at `sizes[l - 1]`.
    pub sizes: Vec<usize>,
}

impl Labeling {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    /// Label of the largest component; ties go to the lower label, which is
    /// the component holding the smallest linear index.
    pub fn largest(&self) -> Option<u32> {
        let mut best: Option<(usize, u32)> = None;
        for (i, &s) in self.sizes.iter().enumerate() {
            if best.is_none_or(|(bs, _)| s > bs) {
                best = Some((s, i as u32 + 1));
            }
        }
        best.map(|(_, l)| l)
    }
}

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn find(&mut self, mut a: u32) -> u32 {
        let mut root = a;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        while self.parent[a as usize] != root {
            let next = self.parent[a as usize];
            self.parent[a as usize] = root;
            a = next;
        }
        root
    }

    fn union(&mut self, a: u32, b: u32) -> u32 {
        let ra = self.find(a);
        let rb = self.find(b);
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi as usize] = lo;
        lo
    }

    fn make(&mut self) -> u32 {
        let l = self.parent.len() as u32;
        self.parent.push(l);
        l
    }
}

/// Labels the `true` voxels of `mask` (x-fastest, `dims` = `[nx, ny, nz]`).
pub fn label_components(mask: &[bool], dims: [usize; 3], conn: Connectivity) -> Labeling {
    let [nx, ny, nz] = dims;
    assert_eq!(mask.len(), nx * ny * nz, "mask length does not match dims");
    let offsets = conn.backward_offsets();
    let mut prov = vec![0u32; mask.len()];
    // Provisional label 0 is reserved for background.
    let mut uf = UnionFind { parent: vec![0] };

    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let idx = x + nx * (y + ny * z);
                if !mask[idx] {
                    continue;
                }
                let mut current = 0u32;
                for &(dx, dy, dz) in offsets {
                    let (qx, qy, qz) = (x as isize + dx, y as isize + dy, z as isize + dz);
                    if qx < 0 || qy < 0 || qz < 0 || qx >= nx as isize || qy >= ny as isize {
                        continue;
                    }
                    let q = qx as usize + nx * (qy as usize + ny * qz as usize);
                    let l = prov[q];
                    if l == 0 {
                        continue;
                    }
                    current = if current == 0 { uf.find(l) } else { uf.union(current, l) };
                }
                prov[idx] = if current == 0 { uf.make() } else { current };
            }
        }
    }

    // Resolve roots and renumber in order of first appearance.
    let mut final_of_root = vec![0u32; uf.parent.len()];
    let mut sizes = Vec::new();
    for l in prov.iter_mut() {
        if *l == 0 {
            continue;
        }
        let root = uf.find(*l) as usize;
        if final_of_root[root] == 0 {
            sizes.push(0);
            final_of_root[root] = sizes.len() as u32;
        }
        *l = final_of_root[root];
        sizes[*l as usize - 1] += 1;
    }
    Labeling { labels: prov, sizes }
}

/// Keeps only the largest `conn`-connected component of `mask`.
pub fn largest_component(mask: &[bool], dims: [usize; 3], conn: Connectivity) -> Option<Vec<bool>> {
    let labeling = label_components(mask, dims, conn);
    let keep = labeling.largest()?;
    Some(labeling.labels.iter().map(|&l| l == keep).collect())
}

/// Fills every 6-connected background component that does not touch the
/// grid border.
pub fn fill_holes(mask: &[bool], dims: [usize; 3]) -> Vec<bool> {
    let [nx, ny, nz] = dims;
    let background: Vec<bool> = mask.iter().map(|&m| !m).collect();
    let labeling = label_components(&background, dims, Connectivity::Six);
    let mut touches_border = vec![false; labeling.count() + 1];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let on_border = x == 0 || y == 0 || z == 0 || x + 1 == nx || y + 1 == ny || z + 1 == nz;
                if on_border {
                    touches_border[labeling.labels[x + nx * (y + ny * z)] as usize] = true;
                }
            }
        }
    }
    mask.iter()
        .zip(&labeling.labels)
        .map(|(&m, &l)| m || !touches_border[l as usize])
        .collect()
}

//! Flood-fill oracle for body masking and the volumes it is checked on.

#![allow(dead_code)]

use std::collections::VecDeque;

use petct_core::phantom::{generate_phantom, PhantomSpec};
use petct_core::preprocess::{extract_body_mask, DEFAULT_BODY_THRESHOLD};
use petct_core::{SubjectRecord, Tracer, Volume3D, VolumeKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn neighbors(dims: [usize; 3], i: usize, full: bool) -> Vec<usize> {
    let [nx, ny, nz] = dims;
    let (x, y, z) = ((i % nx) as isize, ((i / nx) % ny) as isize, (i / (nx * ny)) as isize);
    let mut out = Vec::new();
    for dz in -1..=1isize {
        for dy in -1..=1isize {
            for dx in -1..=1isize {
                let manhattan = dx.abs() + dy.abs() + dz.abs();
                if manhattan == 0 || (!full && manhattan > 1) {
                    continue;
                }
                let (a, b, c) = (x + dx, y + dy, z + dz);
                if a < 0 || b < 0 || c < 0 || a >= nx as isize || b >= ny as isize || c >= nz as isize {
                    continue;
                }
                out.push(a as usize + nx * (b as usize + ny * c as usize));
            }
        }
    }
    out
}

/// BFS flood fill: largest 26-connected component (first in scan order on
/// ties), then every 6-connected background region not reaching the border
/// is filled.
pub fn oracle_mask(ct: &[f32], dims: [usize; 3], threshold: f32) -> Option<Vec<bool>> {
    let n = ct.len();
    let fg: Vec<bool> = ct.iter().map(|&v| v > threshold).collect();
    let mut seen = vec![false; n];
    let mut best: Option<Vec<usize>> = None;
    for s in 0..n {
        if !fg[s] || seen[s] {
            continue;
        }
        let mut comp = vec![s];
        let mut q = VecDeque::from([s]);
        seen[s] = true;
        while let Some(i) = q.pop_front() {
            for j in neighbors(dims, i, true) {
                if fg[j] && !seen[j] {
                    seen[j] = true;
                    comp.push(j);
                    q.push_back(j);
                }
            }
        }
        if best.as_ref().is_none_or(|b| comp.len() > b.len()) {
            best = Some(comp);
        }
    }
    let mut mask = vec![false; n];
    for i in best? {
        mask[i] = true;
    }
    // Flood the outside from every border background voxel.
    let [nx, ny, nz] = dims;
    let mut outside = vec![false; n];
    let mut q = VecDeque::new();
    for i in 0..n {
        let (x, y, z) = (i % nx, (i / nx) % ny, i / (nx * ny));
        let border = x == 0 || y == 0 || z == 0 || x + 1 == nx || y + 1 == ny || z + 1 == nz;
        if border && !mask[i] {
            outside[i] = true;
            q.push_back(i);
        }
    }
    while let Some(i) = q.pop_front() {
        for j in neighbors(dims, i, false) {
            if !mask[j] && !outside[j] {
                outside[j] = true;
                q.push_back(j);
            }
        }
    }
    Some(outside.iter().map(|&o| !o).collect())
}

/// Compares [`extract_body_mask`] (mask and box) with the oracle.
pub fn matches_oracle(ct: &Volume3D) -> Result<(), String> {
    let dims = ct.dims();
    let got = extract_body_mask(ct, DEFAULT_BODY_THRESHOLD);
    match oracle_mask(ct.data(), dims, DEFAULT_BODY_THRESHOLD) {
        None if got.is_err() => Ok(()),
        None => Err(format!("dims {dims:?}: oracle finds no body")),
        Some(want) => {
            let crop = got.map_err(|e| format!("dims {dims:?}: {e}"))?;
            let mine: Vec<bool> = crop.mask.data().iter().map(|&v| v == 1.0).collect();
            if mine != want {
                return Err(format!("dims {dims:?}: masks differ"));
            }
            let mut lo = dims;
            let mut hi = [0; 3];
            for (i, _) in want.iter().enumerate().filter(|(_, &m)| m) {
                let c = ct.coords(i);
                for a in 0..3 {
                    lo[a] = lo[a].min(c[a]);
                    hi[a] = hi[a].max(c[a]);
                }
            }
            if (crop.lo, crop.hi) != (lo, hi) {
                return Err(format!("dims {dims:?}: box {:?} vs {:?}", (crop.lo, crop.hi), (lo, hi)));
            }
            Ok(())
        }
    }
}

/// Random binary CT volumes up to 12³ with varying density.
pub fn random_volumes(count: usize, seed: u64) -> Vec<Volume3D> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let dims = [0; 3].map(|_| r.random_range(1..=12));
            let density: f64 = r.random_range(0.05..0.7);
            let data = (0..dims.iter().product::<usize>())
                .map(|_| if r.random_bool(density) { 40.0 } else { -1000.0 })
                .collect();
            Volume3D::from_data(dims, VolumeKind::CtHu, data).unwrap()
        })
        .collect()
}

/// Phantoms of both tracers with varied shapes and lesion counts.
pub fn structured_phantoms(count: usize) -> Vec<SubjectRecord> {
    (0..count)
        .map(|i| {
            let tracer = if i % 2 == 0 { Tracer::Fdg } else { Tracer::Psma };
            let dims = [24 + 4 * (i % 4), 24 + 6 * (i % 3), 28 + 4 * (i % 5)];
            let spec = PhantomSpec {
                dims,
                ..PhantomSpec::new(tracer, i % 4, 100 + i as u64)
            };
            generate_phantom(&spec, format!("p{i}")).unwrap()
        })
        .collect()
}

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng as _;

use crate::rng::Rng;
use crate::volume::SubjectRecord;

/// One training window. Arrays are x-fastest over `patch_size`.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub ct: Vec<f32>,
    pub pet: Vec<f32>,
    pub label: Vec<f32>,
    /// Window origin in padded coordinates.
    pub start: [usize; 3],
}

/// Patch sampling over one record, with lesion voxels indexed once.
pub struct PatchSampler<'a> {
    ct: &'a [f32],
    pet: &'a [f32],
    label: Option<&'a [f32]>,
    dims: [usize; 3],
    lesions: Vec<usize>,
    fill: [f32; 2],
}

impl<'a> PatchSampler<'a> {
    pub fn new(ct: &'a [f32], pet: &'a [f32], label: Option<&'a [f32]>, dims: [usize; 3]) -> Self {
        let lesions = label.map_or_else(Vec::new, |l| {
            l.iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(i, _)| i)
                .collect()
        });
        let min = |s: &[f32]| s.iter().copied().fold(f32::INFINITY, f32::min);
        Self {
            ct,
            pet,
            label,
            dims,
            lesions,
            fill: [min(ct), min(pet)],
        }
    }

    pub fn from_record(rec: &'a SubjectRecord) -> Self {
        Self::new(
            rec.ct.data(),
            rec.pet.data(),
            rec.label.as_ref().map(|l| l.data()),
            rec.dims(),
        )
    }

    pub fn has_lesion(&self) -> bool {
        !self.lesions.is_empty()
    }

    /// With probability `fg_oversample` the window is centered on a random
    /// lesion voxel (clamped to stay inside); otherwise its start is
    /// uniform over all valid positions. Axes shorter than the patch are
    /// padded symmetrically with the channel minimum and label 0.
    pub fn sample(&self, patch: [usize; 3], rng: &mut Rng, fg_oversample: f64) -> Patch {
        let padded: [usize; 3] = core::array::from_fn(|a| self.dims[a].max(patch[a]));
        let lo: [usize; 3] = core::array::from_fn(|a| (padded[a] - self.dims[a]) / 2);
        let forced = fg_oversample > 0.0 && rng.random::<f64>() < fg_oversample && self.has_lesion();
        let start: [usize; 3] = if forced {
            let v = self.lesions[rng.random_range(0..self.lesions.len())];
            let [nx, ny, _] = self.dims;
            let c = [v % nx, (v / nx) % ny, v / (nx * ny)];
            core::array::from_fn(|a| {
                let center = c[a] + lo[a];
                center.saturating_sub(patch[a] / 2).min(padded[a] - patch[a])
            })
        } else {
            core::array::from_fn(|a| rng.random_range(0..=padded[a] - patch[a]))
        };
        let n: usize = patch.iter().product();
        let mut out = Patch {
            ct: vec![0.0; n],
            pet: vec![0.0; n],
            label: vec![0.0; n],
            start,
        };
        let mut k = 0;
        for z in 0..patch[2] {
            for y in 0..patch[1] {
                for x in 0..patch[0] {
                    let p = [start[0] + x, start[1] + y, start[2] + z];
                    if (0..3).all(|a| p[a] >= lo[a] && p[a] < lo[a] + self.dims[a]) {
                        let i = (p[0] - lo[0]) + self.dims[0] * ((p[1] - lo[1]) + self.dims[1] * (p[2] - lo[2]));
                        out.ct[k] = self.ct[i];
                        out.pet[k] = self.pet[i];
                        out.label[k] = self.label.map_or(0.0, |l| l[i]);
                    } else {
                        out.ct[k] = self.fill[0];
                        out.pet[k] = self.fill[1];
                    }
                    k += 1;
                }
            }
        }
        out
    }
}

/// Samples one window from a cropped, normalized record.
pub fn sample_patch(rec: &SubjectRecord, patch: [usize; 3], rng: &mut Rng, fg_oversample: f64) -> Patch {
    PatchSampler::from_record(rec).sample(patch, rng, fg_oversample)
}

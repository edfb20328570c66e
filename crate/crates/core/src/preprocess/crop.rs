use alloc::vec;
use alloc::vec::Vec;

use super::components::{fill_holes, largest_component, Connectivity};
use super::PreprocessError;
use crate::volume::{CropInfo, SubjectRecord, Volume3D, VolumeError, VolumeKind};

/// Body mask over the original grid plus its minimal bounding box.
#[derive(Clone, Debug, PartialEq)]
pub struct BodyCrop {
    pub mask: Volume3D,
    /// Inclusive voxel bounds per axis.
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl BodyCrop {
    pub fn offset(&self) -> [usize; 3] {
        self.lo
    }

    pub fn cropped_dims(&self) -> [usize; 3] {
        core::array::from_fn(|a| self.hi[a] - self.lo[a] + 1)
    }

    pub fn info(&self) -> CropInfo {
        CropInfo {
            offset: self.lo,
            original_dims: self.mask.dims(),
        }
    }
}

/// Largest 26-connected component of `ct > threshold`, with enclosed
/// cavities filled, and its bounding box.
pub fn extract_body_mask(ct: &Volume3D, threshold: f32) -> Result<BodyCrop, PreprocessError> {
    let dims = ct.dims();
    let fg: Vec<bool> = ct.data().iter().map(|&v| v > threshold).collect();
    let body =
        largest_component(&fg, dims, Connectivity::TwentySix).ok_or(PreprocessError::EmptyForeground(threshold))?;
    let filled = fill_holes(&body, dims);

    let mut lo = dims;
    let mut hi = [0usize; 3];
    for (i, _) in filled.iter().enumerate().filter(|(_, &m)| m) {
        let c = ct.coords(i);
        for a in 0..3 {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
    }
    let mask = ct.with_data(
        VolumeKind::Label,
        filled.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
    )?;
    Ok(BodyCrop { mask, lo, hi })
}

/// Restricts `vol` to the inclusive box `[lo, hi]`; the origin moves with it.
pub fn crop_volume(vol: &Volume3D, lo: [usize; 3], hi: [usize; 3]) -> Result<Volume3D, VolumeError> {
    let dims = vol.dims();
    if (0..3).any(|a| lo[a] > hi[a] || hi[a] >= dims[a]) {
        return Err(VolumeError::DimensionMismatch(dims, [hi[0] + 1, hi[1] + 1, hi[2] + 1]));
    }
    let out_dims: [usize; 3] = core::array::from_fn(|a| hi[a] - lo[a] + 1);
    let mut data = Vec::with_capacity(out_dims.iter().product());
    for z in lo[2]..=hi[2] {
        for y in lo[1]..=hi[1] {
            let row = vol.index(lo[0], y, z);
            data.extend_from_slice(&vol.data()[row..row + out_dims[0]]);
        }
    }
    let sp = vol.spacing();
    let org = vol.origin();
    let origin = core::array::from_fn(|a| org[a] + lo[a] as f32 * sp[a]);
    Volume3D::new(out_dims, sp, origin, vol.kind(), data)
}

/// Places a cropped volume back into a zero-filled grid of `original_dims`.
pub fn uncrop_volume(vol: &Volume3D, offset: [usize; 3], original_dims: [usize; 3]) -> Result<Volume3D, VolumeError> {
    let d = vol.dims();
    if (0..3).any(|a| offset[a] + d[a] > original_dims[a]) {
        return Err(VolumeError::DimensionMismatch(d, original_dims));
    }
    let [nx, ny, _] = original_dims;
    let mut data = vec![0.0f32; original_dims.iter().product()];
    for z in 0..d[2] {
        for y in 0..d[1] {
            let src = vol.index(0, y, z);
            let dst = offset[0] + nx * ((offset[1] + y) + ny * (offset[2] + z));
            data[dst..dst + d[0]].copy_from_slice(&vol.data()[src..src + d[0]]);
        }
    }
    let sp = vol.spacing();
    let org = vol.origin();
    let origin = core::array::from_fn(|a| org[a] - offset[a] as f32 * sp[a]);
    Volume3D::new(original_dims, sp, origin, vol.kind(), data)
}

/// Applies the CT-derived bounding box to CT, PET and label alike.
pub fn crop_subject(rec: &SubjectRecord, crop: &BodyCrop) -> Result<SubjectRecord, PreprocessError> {
    rec.check_dims()?;
    rec.ct.same_dims(&crop.mask)?;
    let ct = crop_volume(&rec.ct, crop.lo, crop.hi)?;
    let pet = crop_volume(&rec.pet, crop.lo, crop.hi)?;
    let label = rec
        .label
        .as_ref()
        .map(|l| crop_volume(l, crop.lo, crop.hi))
        .transpose()?;
    let info = match rec.crop {
        // Cropping an already-cropped record composes the offsets.
        Some(prev) => CropInfo {
            offset: core::array::from_fn(|a| prev.offset[a] + crop.lo[a]),
            original_dims: prev.original_dims,
        },
        None => crop.info(),
    };
    Ok(SubjectRecord {
        id: rec.id.clone(),
        ct,
        pet,
        label,
        tracer: rec.tracer,
        crop: Some(info),
    })
}

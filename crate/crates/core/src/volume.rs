//! 3D scalar volumes and co-registered subject records.
//!
//! Voxels are stored x-fastest: the linear index of `(x, y, z)` is
//! `x + nx * (y + ny * z)`, which is the NIfTI on-disk order.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// What a volume's intensities mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VolumeKind {
    /// CT in Hounsfield units.
    CtHu,
    /// PET in standardized uptake values.
    PetSuv,
    /// Binary label, every voxel 0 or 1.
    Label,
}

/// PET radiotracer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tracer {
    Fdg,
    Psma,
}

impl Tracer {
    pub fn as_str(self) -> &'static str {
        match self {
            Tracer::Fdg => "FDG",
            Tracer::Psma => "PSMA",
        }
    }

    /// Binary class used by the tracer classifier (PSMA is the positive class).
    pub fn class(self) -> u8 {
        match self {
            Tracer::Fdg => 0,
            Tracer::Psma => 1,
        }
    }

    pub fn from_class(c: u8) -> Self {
        if c == 0 {
            Tracer::Fdg
        } else {
            Tracer::Psma
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VolumeError {
    #[error("dimensions must be positive, got {0:?}")]
    ZeroDimension([usize; 3]),
    #[error("data length {got} does not match dims product {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("spacing must be strictly positive, got {0:?}")]
    BadSpacing([f32; 3]),
    #[error("label volume holds non-binary value {0}")]
    NonBinaryLabel(f32),
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimensionMismatch([usize; 3], [usize; 3]),
}

/// Dense 3D scalar grid with spacing/origin metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume3D {
    dims: [usize; 3],
    spacing: [f32; 3],
    origin: [f32; 3],
    kind: VolumeKind,
    data: Vec<f32>,
}

impl Volume3D {
    /// Validating constructor; every public way of building a volume goes
    /// through these checks.
    pub fn new(
        dims: [usize; 3],
        spacing: [f32; 3],
        origin: [f32; 3],
        kind: VolumeKind,
        data: Vec<f32>,
    ) -> Result<Self, VolumeError> {
        if dims.contains(&0) {
            return Err(VolumeError::ZeroDimension(dims));
        }
        let expected = dims[0] * dims[1] * dims[2];
        if data.len() != expected {
            return Err(VolumeError::LengthMismatch {
                expected,
                got: data.len(),
            });
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(VolumeError::BadSpacing(spacing));
        }
        if kind == VolumeKind::Label {
            if let Some(&v) = data.iter().find(|&&v| v != 0.0 && v != 1.0) {
                return Err(VolumeError::NonBinaryLabel(v));
            }
        }
        Ok(Self {
            dims,
            spacing,
            origin,
            kind,
            data,
        })
    }

    /// Unit-spacing, zero-origin volume.
    pub fn from_data(dims: [usize; 3], kind: VolumeKind, data: Vec<f32>) -> Result<Self, VolumeError> {
        Self::new(dims, [1.0; 3], [0.0; 3], kind, data)
    }

    pub fn filled(dims: [usize; 3], kind: VolumeKind, value: f32) -> Result<Self, VolumeError> {
        let n = dims.iter().product();
        Self::from_data(dims, kind, vec![value; n])
    }

    /// A volume on the same grid as `self` with new data and kind.
    pub fn with_data(&self, kind: VolumeKind, data: Vec<f32>) -> Result<Self, VolumeError> {
        Self::new(self.dims, self.spacing, self.origin, kind, data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f32; 3] {
        self.origin
    }

    pub fn kind(&self) -> VolumeKind {
        self.kind
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    /// Number of voxels with a non-zero value.
    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Applies `f` voxelwise, keeping the grid.
    pub fn map(&self, kind: VolumeKind, f: impl Fn(f32) -> f32) -> Result<Self, VolumeError> {
        self.with_data(kind, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn same_dims(&self, other: &Volume3D) -> Result<(), VolumeError> {
        if self.dims != other.dims {
            return Err(VolumeError::DimensionMismatch(self.dims, other.dims));
        }
        Ok(())
    }
}

/// Where a cropped record sits inside its original grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropInfo {
    /// Inclusive lower corner of the crop box in original voxel coordinates.
    pub offset: [usize; 3],
    pub original_dims: [usize; 3],
}

/// One co-registered PET-CT study.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectRecord {
    pub id: String,
    pub ct: Volume3D,
    pub pet: Volume3D,
    pub label: Option<Volume3D>,
    pub tracer: Option<Tracer>,
    /// Set once the record has been restricted to its body bounding box.
    pub crop: Option<CropInfo>,
}

impl SubjectRecord {
    pub fn new(
        id: impl Into<String>,
        ct: Volume3D,
        pet: Volume3D,
        label: Option<Volume3D>,
        tracer: Option<Tracer>,
    ) -> Result<Self, VolumeError> {
        let rec = Self {
            id: id.into(),
            ct,
            pet,
            label,
            tracer,
            crop: None,
        };
        rec.check_dims()?;
        Ok(rec)
    }

    /// Co-registration check: all volumes share one grid.
    pub fn check_dims(&self) -> Result<(), VolumeError> {
        self.ct.same_dims(&self.pet)?;
        if let Some(label) = &self.label {
            self.ct.same_dims(label)?;
        }
        Ok(())
    }

    pub fn dims(&self) -> [usize; 3] {
        self.ct.dims()
    }

    pub fn has_lesion(&self) -> bool {
        self.label.as_ref().is_some_and(|l| l.count_nonzero() > 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_construction() {
        assert_eq!(
            Volume3D::from_data([2, 2, 0], VolumeKind::CtHu, vec![]),
            Err(VolumeError::ZeroDimension([2, 2, 0]))
        );
        assert!(matches!(
            Volume3D::from_data([2, 2, 2], VolumeKind::CtHu, vec![0.0; 7]),
            Err(VolumeError::LengthMismatch { expected: 8, got: 7 })
        ));
        assert!(matches!(
            Volume3D::new([1, 1, 1], [1.0, 0.0, 1.0], [0.0; 3], VolumeKind::CtHu, vec![0.0]),
            Err(VolumeError::BadSpacing(_))
        ));
        assert_eq!(
            Volume3D::from_data([1, 1, 2], VolumeKind::Label, vec![0.0, 0.5]),
            Err(VolumeError::NonBinaryLabel(0.5))
        );
    }

    #[test]
    fn x_fastest_indexing() {
        let v = Volume3D::from_data([2, 3, 4], VolumeKind::CtHu, (0..24).map(|i| i as f32).collect()).unwrap();
        assert_eq!(v.index(1, 0, 0), 1);
        assert_eq!(v.index(0, 1, 0), 2);
        assert_eq!(v.index(0, 0, 1), 6);
        assert_eq!(v.get(1, 2, 3), 23.0);
        for i in 0..24 {
            let [x, y, z] = v.coords(i);
            assert_eq!(v.index(x, y, z), i);
        }
    }

    #[test]
    fn subject_requires_coregistration() {
        let a = Volume3D::filled([2, 2, 2], VolumeKind::CtHu, 0.0).unwrap();
        let b = Volume3D::filled([2, 2, 3], VolumeKind::PetSuv, 0.0).unwrap();
        assert!(SubjectRecord::new("s", a.clone(), b, None, None).is_err());
        let c = Volume3D::filled([2, 2, 2], VolumeKind::PetSuv, 0.0).unwrap();
        assert!(SubjectRecord::new("s", a, c, None, Some(Tracer::Fdg)).is_ok());
    }
}

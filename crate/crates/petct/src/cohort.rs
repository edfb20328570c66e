//! On-disk cohort layout: one folder per subject plus `manifest.json`.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/<id>/ct.nii.gz
//! <dir>/<id>/pet.nii.gz
//! <dir>/<id>/label.nii.gz   (optional)
//! <dir>/<id>/crop.json      (preprocessed cohorts only)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use petct_core::volume::{CropInfo, SubjectRecord, Tracer, VolumeError, VolumeKind};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nifti::{read_nifti, write_nifti, NiftiError};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CROP_FILE: &str = "crop.json";

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Nifti(#[from] NiftiError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error("subject {0} not in manifest")]
    UnknownSubject(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Raw,
    Preprocessed,
}

/// One subject; paths are relative to the cohort directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub tracer: Option<Tracer>,
    pub lesion_count: Option<usize>,
    pub ct: String,
    pub pet: String,
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: Stage,
    pub subjects: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn entry(&self, id: &str) -> Result<&ManifestEntry, CohortError> {
        self.subjects
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| CohortError::UnknownSubject(id.into()))
    }
}

/// Where a preprocessed subject sits in its original grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropSidecar {
    pub id: String,
    /// Original voxel coordinate of cropped voxel (0, 0, 0).
    pub offset: [usize; 3],
    pub original_dims: [usize; 3],
    pub cropped_dims: [usize; 3],
    pub threshold: f32,
    pub clip: [f32; 2],
}

impl CropSidecar {
    pub fn info(&self) -> CropInfo {
        CropInfo {
            offset: self.offset,
            original_dims: self.original_dims,
        }
    }

    /// Maps a cropped voxel coordinate back to the original grid.
    pub fn to_original(&self, p: [usize; 3]) -> [usize; 3] {
        std::array::from_fn(|a| p[a] + self.offset[a])
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CohortError> {
    let s = fs::read(path).map_err(|source| CohortError::Io {
        path: path.into(),
        source,
    })?;
    serde_json::from_slice(&s).map_err(|source| CohortError::Json {
        path: path.into(),
        source,
    })
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CohortError> {
    let mut s = serde_json::to_vec_pretty(value).map_err(|source| CohortError::Json {
        path: path.into(),
        source,
    })?;
    s.push(b'\n');
    fs::write(path, s).map_err(|source| CohortError::Io {
        path: path.into(),
        source,
    })
}

pub fn create_dir(path: &Path) -> Result<(), CohortError> {
    fs::create_dir_all(path).map_err(|source| CohortError::Io {
        path: path.into(),
        source,
    })
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, CohortError> {
    read_json(&dir.join(MANIFEST_FILE))
}

pub fn write_manifest(dir: &Path, m: &Manifest) -> Result<(), CohortError> {
    write_json(&dir.join(MANIFEST_FILE), m)
}

/// Loads one subject; a crop sidecar, when listed, fills `rec.crop`.
pub fn load_subject(dir: &Path, e: &ManifestEntry) -> Result<SubjectRecord, CohortError> {
    let ct = read_nifti(&dir.join(&e.ct), VolumeKind::CtHu)?;
    let pet = read_nifti(&dir.join(&e.pet), VolumeKind::PetSuv)?;
    let label = e
        .label
        .as_ref()
        .map(|l| read_nifti(&dir.join(l), VolumeKind::Label))
        .transpose()?;
    let mut rec = SubjectRecord::new(e.id.clone(), ct, pet, label, e.tracer)?;
    if let Some(c) = &e.crop {
        let side: CropSidecar = read_json(&dir.join(c))?;
        rec.crop = Some(side.info());
    }
    Ok(rec)
}

/// Writes the subject's volumes under `<dir>/<id>/` and returns its entry
/// (without a crop sidecar).
pub fn save_subject(
    dir: &Path,
    rec: &SubjectRecord,
    lesion_count: Option<usize>,
) -> Result<ManifestEntry, CohortError> {
    let sub = dir.join(&rec.id);
    create_dir(&sub)?;
    let rel = |f: &str| format!("{}/{f}", rec.id);
    write_nifti(&rec.ct, &sub.join("ct.nii.gz"))?;
    write_nifti(&rec.pet, &sub.join("pet.nii.gz"))?;
    let label = match &rec.label {
        Some(l) => {
            write_nifti(l, &sub.join("label.nii.gz"))?;
            Some(rel("label.nii.gz"))
        }
        None => None,
    };
    Ok(ManifestEntry {
        id: rec.id.clone(),
        tracer: rec.tracer,
        lesion_count,
        ct: rel("ct.nii.gz"),
        pet: rel("pet.nii.gz"),
        label,
        crop: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use petct_core::phantom::{generate_phantom, PhantomSpec};

    #[test]
    fn subject_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = PhantomSpec {
            dims: [24, 24, 24],
            ..PhantomSpec::new(Tracer::Psma, 1, 4)
        };
        let rec = generate_phantom(&spec, "s1").unwrap();
        let e = save_subject(dir.path(), &rec, Some(1)).unwrap();
        let m = Manifest {
            stage: Stage::Raw,
            subjects: vec![e],
        };
        write_manifest(dir.path(), &m).unwrap();
        let m2 = read_manifest(dir.path()).unwrap();
        assert_eq!(m2, m);
        let back = load_subject(dir.path(), m2.entry("s1").unwrap()).unwrap();
        assert_eq!(back, rec);
        assert!(matches!(m2.entry("nope"), Err(CohortError::UnknownSubject(_))));
    }
}

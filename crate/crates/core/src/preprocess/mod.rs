//! Two-stage preprocessing: body-bounded cropping of the CT (propagated to
//! PET and label), then intensity standardization. Also hosts the trilinear
//! resize used to build tracer-classifier inputs.

pub mod components;
mod crop;
mod intensity;
mod resize;

pub use crop::{crop_subject, crop_volume, extract_body_mask, uncrop_volume, BodyCrop};
pub use intensity::{clip_ct, zscore, NormalizationStats, ZSCORE_EPSILON};
pub use resize::resize_trilinear;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::VolumeError;

/// Default HU threshold separating skin/soft tissue from air.
pub const DEFAULT_BODY_THRESHOLD: f32 = -300.0;
pub const DEFAULT_CLIP_LO: f32 = -800.0;
pub const DEFAULT_CLIP_HI: f32 = 800.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreprocessError {
    #[error("no voxel above the body threshold {0} HU")]
    EmptyForeground(f32),
    #[error("invalid clip range [{lo}, {hi}]")]
    InvalidRange { lo: f32, hi: f32 },
    #[error("invalid resize target {0:?}")]
    InvalidTarget([usize; 3]),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Knobs of the preprocessing stage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub threshold: f32,
    pub clip_lo: f32,
    pub clip_hi: f32,
    pub epsilon: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_BODY_THRESHOLD,
            clip_lo: DEFAULT_CLIP_LO,
            clip_hi: DEFAULT_CLIP_HI,
            epsilon: ZSCORE_EPSILON,
        }
    }
}

/// Body mask, crop to its bounding box, clip CT. Z-scoring happens later,
/// per volume, when training data is assembled.
pub fn preprocess_subject(
    rec: &crate::SubjectRecord,
    cfg: &PreprocessConfig,
) -> Result<(crate::SubjectRecord, BodyCrop), PreprocessError> {
    let crop = extract_body_mask(&rec.ct, cfg.threshold)?;
    let mut out = crop_subject(rec, &crop)?;
    out.ct = clip_ct(&out.ct, cfg.clip_lo, cfg.clip_hi)?;
    Ok((out, crop))
}

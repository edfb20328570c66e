use serde::{Deserialize, Serialize};

use super::PreprocessError;
use crate::volume::Volume3D;

/// Lower clamp for the standard deviation used as z-score divisor.
pub const ZSCORE_EPSILON: f64 = 1e-8;

/// Per-channel statistics of one z-score normalization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: f64,
    /// Already clamped to at least [`ZSCORE_EPSILON`].
    pub std: f64,
}

/// Clamps CT intensities to `[lo, hi]` HU.
pub fn clip_ct(ct: &Volume3D, lo: f32, hi: f32) -> Result<Volume3D, PreprocessError> {
    if !(lo < hi) {
        return Err(PreprocessError::InvalidRange { lo, hi });
    }
    Ok(ct.map(ct.kind(), |v| v.clamp(lo, hi))?)
}

/// Subtracts the volume mean and divides by `max(std, epsilon)`.
///
/// Statistics are accumulated in f64 over the whole volume (population
/// variance). A constant volume maps to all zeros.
pub fn zscore(vol: &Volume3D) -> (Volume3D, NormalizationStats) {
    zscore_with_epsilon(vol, ZSCORE_EPSILON)
}

pub fn zscore_with_epsilon(vol: &Volume3D, epsilon: f64) -> (Volume3D, NormalizationStats) {
    let n = vol.len() as f64;
    let mean = vol.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = vol
        .data()
        .iter()
        .map(|&v| {
            let d = v as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let std = num_traits::Float::sqrt(var).max(epsilon);
    let (lo, hi) = vol.min_max();
    let out = if lo == hi {
        vol.map(vol.kind(), |_| 0.0)
    } else {
        vol.map(vol.kind(), |v| ((v as f64 - mean) / std) as f32)
    }
    .expect("same grid");
    (out, NormalizationStats { mean, std })
}

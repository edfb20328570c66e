//! Axial overlay images written as binary PPM (P6).

use std::path::Path;

use petct_core::preprocess::{DEFAULT_CLIP_HI, DEFAULT_CLIP_LO};
use petct_core::volume::{Volume3D, VolumeError};
use thiserror::Error;

/// Overlay color of mask voxels.
pub const OVERLAY_RGB: [u8; 3] = [255, 0, 0];
/// Weight of the overlay color inside the mask; contour pixels are solid.
pub const OVERLAY_ALPHA: f32 = 0.5;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("slice {slice} outside [0, {depth})")]
    SliceOutOfRange { slice: usize, depth: usize },
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Row-major, 3 bytes per pixel; row `r` is `y = r`.
    pub rgb: Vec<u8>,
}

impl RgbImage {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.rgb);
        out
    }

    pub fn write_ppm(&self, path: &Path) -> Result<(), RenderError> {
        Ok(std::fs::write(path, self.to_ppm())?)
    }
}

/// Slice `z` of the CT (window [-800, 800] HU) averaged with the PET
/// (scaled by the volume maximum), with `mask` tinted and its in-plane
/// contour drawn solid.
pub fn render_overlay(
    ct: &Volume3D,
    pet: &Volume3D,
    mask: Option<&Volume3D>,
    z: usize,
) -> Result<RgbImage, RenderError> {
    ct.same_dims(pet)?;
    if let Some(m) = mask {
        ct.same_dims(m)?;
    }
    let [nx, ny, nz] = ct.dims();
    if z >= nz {
        return Err(RenderError::SliceOutOfRange { slice: z, depth: nz });
    }
    let pet_max = pet.min_max().1.max(0.0);
    let inside = |x: usize, y: usize| mask.is_some_and(|m| m.get(x, y, z) != 0.0);
    let mut rgb = Vec::with_capacity(3 * nx * ny);
    for y in 0..ny {
        for x in 0..nx {
            let c = (ct.get(x, y, z).clamp(DEFAULT_CLIP_LO, DEFAULT_CLIP_HI) - DEFAULT_CLIP_LO)
                / (DEFAULT_CLIP_HI - DEFAULT_CLIP_LO);
            let p = if pet_max > 0.0 {
                (pet.get(x, y, z) / pet_max).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let gray = 255.0 * 0.5 * (c + p);
            let px = if !inside(x, y) {
                [gray.round() as u8; 3]
            } else {
                let edge = x == 0
                    || y == 0
                    || x + 1 == nx
                    || y + 1 == ny
                    || !inside(x - 1, y)
                    || !inside(x + 1, y)
                    || !inside(x, y - 1)
                    || !inside(x, y + 1);
                if edge {
                    OVERLAY_RGB
                } else {
                    OVERLAY_RGB.map(|o| (OVERLAY_ALPHA * o as f32 + (1.0 - OVERLAY_ALPHA) * gray).round() as u8)
                }
            };
            rgb.extend_from_slice(&px);
        }
    }
    Ok(RgbImage {
        width: nx,
        height: ny,
        rgb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use petct_core::volume::VolumeKind;

    fn vols() -> (Volume3D, Volume3D) {
        let ct = Volume3D::from_data(
            [5, 4, 3],
            VolumeKind::CtHu,
            (0..60).map(|i| i as f32 * 20.0 - 600.0).collect(),
        )
        .unwrap();
        let pet =
            Volume3D::from_data([5, 4, 3], VolumeKind::PetSuv, (0..60).map(|i| (i % 7) as f32).collect()).unwrap();
        (ct, pet)
    }

    #[test]
    fn empty_mask_is_grayscale() {
        let (ct, pet) = vols();
        let m = Volume3D::filled([5, 4, 3], VolumeKind::Label, 0.0).unwrap();
        let img = render_overlay(&ct, &pet, Some(&m), 1).unwrap();
        assert_eq!((img.width, img.height), (5, 4));
        assert!(img.rgb.chunks(3).all(|p| p[0] == p[1] && p[1] == p[2]));
        assert_eq!(img, render_overlay(&ct, &pet, None, 1).unwrap());
        let ppm = img.to_ppm();
        assert!(ppm.starts_with(b"P6\n5 4\n255\n"));
        assert_eq!(ppm.len(), 11 + 60);
    }

    #[test]
    fn full_mask_overlays_every_pixel() {
        let (ct, pet) = vols();
        let m = Volume3D::filled([5, 4, 3], VolumeKind::Label, 1.0).unwrap();
        let img = render_overlay(&ct, &pet, Some(&m), 2).unwrap();
        assert!(img.rgb.chunks(3).all(|p| p[0] > p[1] && p[1] == p[2]));
        assert_eq!(img.pixel(0, 0), OVERLAY_RGB);
        assert_ne!(img.pixel(2, 2), OVERLAY_RGB);
    }

    #[test]
    fn slice_out_of_range() {
        let (ct, pet) = vols();
        assert!(matches!(
            render_overlay(&ct, &pet, None, 3),
            Err(RenderError::SliceOutOfRange { slice: 3, depth: 3 })
        ));
    }
}

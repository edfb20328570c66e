use alloc::vec::Vec;

use super::PreprocessError;
use crate::volume::Volume3D;

/// Source coordinate sampled by output index `i` with corner alignment:
/// the first and last samples of both grids coincide.
#[inline]
fn source_coord(i: usize, src: usize, dst: usize) -> f64 {
    if dst == 1 {
        (src - 1) as f64 / 2.0
    } else {
        i as f64 * (src - 1) as f64 / (dst - 1) as f64
    }
}

/// Floor index and fractional weight of a source coordinate.
#[inline]
fn split(c: f64, src: usize) -> (usize, usize, f64) {
    let i0 = (num_traits::Float::floor(c) as usize).min(src - 1);
    let i1 = (i0 + 1).min(src - 1);
    (i0, i1, c - i0 as f64)
}

/// Trilinear resampling to `target` voxels per axis.
pub fn resize_trilinear(vol: &Volume3D, target: [usize; 3]) -> Result<Volume3D, PreprocessError> {
    if target.contains(&0) {
        return Err(PreprocessError::InvalidTarget(target));
    }
    let src = vol.dims();
    if src == target {
        return Ok(vol.clone());
    }
    let axis = |a: usize| -> Vec<(usize, usize, f64)> {
        (0..target[a])
            .map(|i| split(source_coord(i, src[a], target[a]), src[a]))
            .collect()
    };
    let (ax, ay, az) = (axis(0), axis(1), axis(2));
    let d = vol.data();
    let at = |x: usize, y: usize, z: usize| d[x + src[0] * (y + src[1] * z)] as f64;

    let mut out = Vec::with_capacity(target.iter().product());
    for &(z0, z1, fz) in &az {
        for &(y0, y1, fy) in &ay {
            for &(x0, x1, fx) in &ax {
                let c00 = at(x0, y0, z0) * (1.0 - fx) + at(x1, y0, z0) * fx;
                let c10 = at(x0, y1, z0) * (1.0 - fx) + at(x1, y1, z0) * fx;
                let c01 = at(x0, y0, z1) * (1.0 - fx) + at(x1, y0, z1) * fx;
                let c11 = at(x0, y1, z1) * (1.0 - fx) + at(x1, y1, z1) * fx;
                let c0 = c00 * (1.0 - fy) + c10 * fy;
                let c1 = c01 * (1.0 - fy) + c11 * fy;
                out.push((c0 * (1.0 - fz) + c1 * fz) as f32);
            }
        }
    }
    let sp = vol.spacing();
    let spacing = core::array::from_fn(|a| sp[a] * src[a] as f32 / target[a] as f32);
    Ok(Volume3D::new(target, spacing, vol.origin(), vol.kind(), out)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::VolumeKind;

    #[test]
    fn constant_stays_constant() {
        let v = Volume3D::filled([8, 8, 8], VolumeKind::PetSuv, 5.0).unwrap();
        let out = resize_trilinear(&v, [5, 5, 5]).unwrap();
        assert_eq!(out.dims(), [5, 5, 5]);
        assert!(out.data().iter().all(|&x| x == 5.0));
    }

    #[test]
    fn same_dims_is_identity() {
        let v = Volume3D::from_data(
            [3, 2, 2],
            VolumeKind::PetSuv,
            (0..12).map(|i| i as f32 * 0.37).collect(),
        )
        .unwrap();
        assert_eq!(resize_trilinear(&v, [3, 2, 2]).unwrap(), v);
    }

    #[test]
    fn ramp_matches_analytic_samples() {
        // f(x) = x on 9 samples, resampled to 5: sample k sits at x = 2k.
        let v = Volume3D::from_data([9, 2, 2], VolumeKind::PetSuv, (0..36).map(|i| (i % 9) as f32).collect()).unwrap();
        let out = resize_trilinear(&v, [5, 2, 2]).unwrap();
        for z in 0..2 {
            for y in 0..2 {
                for x in 0..5 {
                    let analytic = x as f64 * 8.0 / 4.0;
                    assert!((out.get(x, y, z) as f64 - analytic).abs() < 1e-6);
                }
            }
        }
        // Off-grid: 9 -> 4 samples lands at x = 8k/3.
        let out = resize_trilinear(&v, [4, 2, 2]).unwrap();
        for x in 0..4 {
            let analytic = x as f64 * 8.0 / 3.0;
            assert!((out.get(x, 1, 1) as f64 - analytic).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_target_rejected() {
        let v = Volume3D::filled([2, 2, 2], VolumeKind::PetSuv, 1.0).unwrap();
        assert_eq!(
            resize_trilinear(&v, [0, 2, 2]),
            Err(PreprocessError::InvalidTarget([0, 2, 2]))
        );
    }
}

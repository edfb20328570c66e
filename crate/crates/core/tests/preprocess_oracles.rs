//! Body masking, cropping and z-scoring against straightforward oracles.

#[path = "support/body_mask.rs"]
mod body_mask;

use petct_core::preprocess::{crop_volume, uncrop_volume, zscore};
use petct_core::{Volume3D, VolumeKind};
use proptest::prelude::*;

#[test]
fn body_mask_matches_flood_fill_on_random_volumes() {
    for v in body_mask::random_volumes(200, 77) {
        body_mask::matches_oracle(&v).unwrap();
    }
}

#[test]
fn body_mask_matches_flood_fill_on_phantoms() {
    for rec in body_mask::structured_phantoms(20) {
        body_mask::matches_oracle(&rec.ct).unwrap();
    }
}

fn arb_volume() -> impl Strategy<Value = Volume3D> {
    (1usize..8, 1usize..8, 1usize..8).prop_flat_map(|(x, y, z)| {
        proptest::collection::vec(-1e3f32..1e3, x * y * z)
            .prop_map(move |d| Volume3D::from_data([x, y, z], VolumeKind::PetSuv, d).unwrap())
    })
}

proptest! {
    #[test]
    fn uncrop_inverts_crop_inside_box(vol in arb_volume(), a in any::<[u8; 3]>(), b in any::<[u8; 3]>()) {
        let dims = vol.dims();
        let lo: [usize; 3] = std::array::from_fn(|i| a[i] as usize % dims[i]);
        let hi: [usize; 3] = std::array::from_fn(|i| lo[i] + b[i] as usize % (dims[i] - lo[i]));
        let c = crop_volume(&vol, lo, hi).unwrap();
        let u = uncrop_volume(&c, lo, dims).unwrap();
        prop_assert_eq!(u.origin(), vol.origin());
        for i in 0..vol.len() {
            let p = vol.coords(i);
            let inside = (0..3).all(|k| lo[k] <= p[k] && p[k] <= hi[k]);
            prop_assert_eq!(u.data()[i], if inside { vol.data()[i] } else { 0.0 });
        }
    }

    #[test]
    fn zscore_matches_two_pass(vol in arb_volume()) {
        let d = vol.data();
        let n = d.len() as f64;
        let mean = d.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = d.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt().max(1e-8);
        let (z, stats) = zscore(&vol);
        prop_assert!((stats.mean - mean).abs() <= 1e-9 * mean.abs().max(1.0));
        prop_assert!((stats.std - std).abs() <= 1e-9 * std.max(1.0));
        let constant = d.iter().all(|&v| v == d[0]);
        for (i, &zv) in z.data().iter().enumerate() {
            let want = if constant { 0.0 } else { (d[i] as f64 - mean) / std };
            prop_assert!((zv as f64 - want).abs() <= 1e-5 * want.abs().max(1.0));
        }
    }
}

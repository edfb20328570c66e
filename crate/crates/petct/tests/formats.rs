//! NIfTI round trips on random volumes.

use petct::nifti::{read_nifti, write_nifti};
use petct_core::{Volume3D, VolumeKind};
use proptest::prelude::*;

fn arb_volume() -> impl Strategy<Value = Volume3D> {
    (
        proptest::collection::vec(-3e3f32..3e3, 8 * 8 * 8),
        [0.5f32..4.0, 0.5f32..4.0, 0.5f32..4.0],
        [-300f32..300.0, -300f32..300.0, -300f32..300.0],
    )
        .prop_map(|(data, spacing, origin)| {
            Volume3D::new([8, 8, 8], spacing, origin, VolumeKind::PetSuv, data).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn float_volumes_round_trip(vol in arb_volume(), gz in any::<bool>()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(if gz { "v.nii.gz" } else { "v.nii" });
        write_nifti(&vol, &path).unwrap();
        let back = read_nifti(&path, VolumeKind::PetSuv).unwrap();
        prop_assert_eq!(back.dims(), vol.dims());
        prop_assert_eq!(back.spacing(), vol.spacing());
        prop_assert_eq!(back.origin(), vol.origin());
        prop_assert_eq!(back.data(), vol.data());
    }
}

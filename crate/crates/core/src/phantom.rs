//! Deterministic synthetic PET-CT subjects.
//!
//! Geometry is laid out in normalized coordinates `u ∈ (−1, 1)` per axis,
//! with z the axial direction and the head at high z. FDG subjects carry
//! hot organs in the upper body, PSMA subjects in the lower body, so the
//! two classes differ in where their hot regions sit.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float as Fl;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;
use crate::volume::{SubjectRecord, Tracer, Volume3D, VolumeKind};

pub const AIR_HU: f32 = -1000.0;
pub const TISSUE_HU: f32 = 0.0;
pub const BONE_HU: f32 = 700.0;
pub const BACKGROUND_SUV: f32 = 1.0;
pub const ORGAN_SUV: f32 = 3.0;
/// Lesion uptake range as a multiple of the background.
pub const LESION_SUV: (f32, f32) = (5.0, 10.0);
pub const MAX_LESIONS: usize = 5;
pub const DEFAULT_DIMS: [usize; 3] = [48, 48, 48];
pub const DEFAULT_NOISE: f32 = 0.1;
pub const VOXEL_MM: f32 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhantomError {
    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub tracer: Tracer,
    pub lesion_count: usize,
    pub noise_sigma: f32,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn new(tracer: Tracer, lesion_count: usize, seed: u64) -> Self {
        Self {
            dims: DEFAULT_DIMS,
            tracer,
            lesion_count,
            noise_sigma: DEFAULT_NOISE,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        if self.dims.iter().any(|&d| d < 24) {
            return Err(PhantomError::InvalidSpec(format!(
                "dims {:?} below 24 per axis",
                self.dims
            )));
        }
        if self.lesion_count > MAX_LESIONS {
            return Err(PhantomError::InvalidSpec(format!(
                "lesion count {} above {MAX_LESIONS}",
                self.lesion_count
            )));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(PhantomError::InvalidSpec(format!("noise sigma {}", self.noise_sigma)));
        }
        Ok(())
    }
}

/// Axis-aligned ellipsoid in normalized coordinates.
#[derive(Clone, Copy, Debug)]
struct Blob {
    center: [f64; 3],
    radii: [f64; 3],
}

impl Blob {
    /// Squared normalized radius; `< 1` means inside.
    fn rho2(&self, u: [f64; 3]) -> f64 {
        (0..3).map(|a| ((u[a] - self.center[a]) / self.radii[a]).powi(2)).sum()
    }
}

fn organs(tracer: Tracer, jitter: &mut impl FnMut() -> f64) -> [Blob; 2] {
    let mut j = |c: [f64; 3], r: [f64; 3]| Blob {
        center: c.map(|v| v + 0.03 * jitter()),
        radii: r.map(|v| v * (1.0 + 0.08 * jitter())),
    };
    match tracer {
        // Brain and heart.
        Tracer::Fdg => [
            j([0.0, 0.0, 0.70], [0.30, 0.35, 0.15]),
            j([0.18, -0.10, 0.30], [0.20, 0.22, 0.12]),
        ],
        // Kidney and bladder.
        Tracer::Psma => [
            j([-0.30, 0.20, -0.15], [0.14, 0.14, 0.14]),
            j([0.0, -0.15, -0.65], [0.25, 0.22, 0.10]),
        ],
    }
}

/// Builds one subject. The label marks the lesion spheres.
pub fn generate_phantom(spec: &PhantomSpec, id: impl Into<String>) -> Result<SubjectRecord, PhantomError> {
    spec.validate()?;
    let dims = spec.dims;
    let mut geo = rng::stream(&[spec.seed, 0x6E0]);
    let mut jitter = || geo.random_range(-1.0..1.0);
    let body = Blob {
        center: [0.0, 0.0, 0.0],
        radii: [0.80 + 0.04 * jitter(), 0.60 + 0.04 * jitter(), 0.88 + 0.03 * jitter()],
    };
    let hot = organs(spec.tracer, &mut jitter);

    // Lesions: spheres in voxel units, inside a shrunken body, clear of
    // organs and of each other.
    let scale = *dims.iter().min().unwrap() as f64 / 48.0;
    let mut lesions: Vec<([f64; 3], f64, f32)> = Vec::new();
    let mut attempts = 0;
    while lesions.len() < spec.lesion_count {
        attempts += 1;
        if attempts > 10_000 {
            return Err(PhantomError::InvalidSpec("could not place lesions".into()));
        }
        let r = geo.random_range(2.5..4.0) * scale;
        let u: [f64; 3] = core::array::from_fn(|_| geo.random_range(-1.0..1.0));
        let uptake = geo.random_range(LESION_SUV.0..LESION_SUV.1) * BACKGROUND_SUV;
        let shrunk = Blob {
            radii: body.radii.map(|v| v * 0.65),
            ..body
        };
        if shrunk.rho2(u) >= 1.0 {
            continue;
        }
        let c: [f64; 3] = core::array::from_fn(|a| (u[a] + 1.0) / 2.0 * dims[a] as f64 - 0.5);
        let margin = |b: &Blob| {
            let grown = Blob {
                radii: core::array::from_fn(|a| b.radii[a] + 2.0 * (r + 1.0) / dims[a] as f64),
                ..*b
            };
            grown.rho2(u) < 1.0
        };
        if hot.iter().any(margin) {
            continue;
        }
        if lesions.iter().any(|(o, ro, _)| {
            let d2: f64 = (0..3).map(|a| (o[a] - c[a]).powi(2)).sum();
            Fl::sqrt(d2) < r + ro + 2.0
        }) {
            continue;
        }
        lesions.push((c, r, uptake));
    }

    let n = dims.iter().product();
    let mut ct = vec![AIR_HU; n];
    let mut pet = vec![0.0f32; n];
    let mut label = vec![0.0f32; n];
    let mut i = 0;
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p = [x, y, z];
                let u: [f64; 3] = core::array::from_fn(|a| (p[a] as f64 + 0.5) / dims[a] as f64 * 2.0 - 1.0);
                let rho2 = body.rho2(u);
                if rho2 < 1.0 {
                    let rho = Fl::sqrt(rho2);
                    ct[i] = if (0.80..0.88).contains(&rho) {
                        BONE_HU
                    } else {
                        TISSUE_HU
                    };
                    pet[i] = BACKGROUND_SUV;
                    if hot.iter().any(|b| b.rho2(u) < 1.0) {
                        pet[i] = ORGAN_SUV;
                    }
                    for (c, r, uptake) in &lesions {
                        let d2: f64 = (0..3).map(|a| (p[a] as f64 - c[a]).powi(2)).sum();
                        if d2 <= r * r {
                            pet[i] = *uptake;
                            label[i] = 1.0;
                        }
                    }
                }
                i += 1;
            }
        }
    }

    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0f32, spec.noise_sigma).expect("validated sigma");
        let mut noise = rng::stream(&[spec.seed, 0x4015E]);
        for v in ct.iter_mut() {
            *v += normal.sample(&mut noise);
        }
        for v in pet.iter_mut() {
            *v = (*v + normal.sample(&mut noise)).max(0.0);
        }
    }

    let sp = [VOXEL_MM; 3];
    let org = [0.0; 3];
    let mk = |kind, data| Volume3D::new(dims, sp, org, kind, data).expect("phantom grid");
    SubjectRecord::new(
        id,
        mk(VolumeKind::CtHu, ct),
        mk(VolumeKind::PetSuv, pet),
        Some(mk(VolumeKind::Label, label)),
        Some(spec.tracer),
    )
    .map_err(|e| PhantomError::InvalidSpec(format!("{e}")))
}

/// One generated cohort member.
#[derive(Clone, Debug, PartialEq)]
pub struct CohortSubject {
    pub spec: PhantomSpec,
    pub record: SubjectRecord,
}

/// Identifier of the `i`-th cohort subject.
pub fn subject_id(i: usize) -> String {
    format!("subj_{i:04}")
}

/// Phantom specs of a cohort: `n_fdg` FDG subjects, then `n_psma` PSMA
/// subjects. Each has lesions with probability `lesion_rate`, then 1 to 4
/// of them.
pub fn cohort_specs(n_fdg: usize, n_psma: usize, lesion_rate: f64, seed: u64, dims: [usize; 3]) -> Vec<PhantomSpec> {
    let rate = lesion_rate.clamp(0.0, 1.0);
    (0..n_fdg + n_psma)
        .map(|i| {
            let tracer = if i < n_fdg { Tracer::Fdg } else { Tracer::Psma };
            let mut r = rng::stream(&[seed, 0xC0407, i as u64]);
            let lesion_count = if r.random_bool(rate) { r.random_range(1..=4) } else { 0 };
            PhantomSpec {
                dims,
                tracer,
                lesion_count,
                noise_sigma: DEFAULT_NOISE,
                seed: rng::derive_seed(&[seed, 0x5B1, i as u64]),
            }
        })
        .collect()
}

pub fn generate_cohort(
    n_fdg: usize,
    n_psma: usize,
    lesion_rate: f64,
    seed: u64,
) -> Result<Vec<CohortSubject>, PhantomError> {
    cohort_specs(n_fdg, n_psma, lesion_rate, seed, DEFAULT_DIMS)
        .into_iter()
        .enumerate()
        .map(|(i, spec)| {
            let record = generate_phantom(&spec, subject_id(i))?;
            Ok(CohortSubject { spec, record })
        })
        .collect()
}

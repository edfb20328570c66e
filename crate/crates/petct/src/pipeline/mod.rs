//! The pipeline stages behind each subcommand.

mod infer;
mod train;

pub use infer::{cmd_evaluate, cmd_infer, cmd_render, EvaluationOutput, InferModels, InferRecord};
pub use train::{cmd_shapes, cmd_train, format_shape_report, RunSummary, TrainTask};

use std::path::Path;

use petct_core::phantom::{cohort_specs, generate_phantom, subject_id, PhantomError, DEFAULT_DIMS};
use petct_core::preprocess::{preprocess_subject, PreprocessConfig};
use rayon::prelude::*;
use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::cohort::{
    create_dir, load_subject, read_manifest, save_subject, write_json, write_manifest, CohortError, CropSidecar,
    Manifest, Stage, CROP_FILE,
};
use crate::nifti::NiftiError;
use crate::render::RenderError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("preprocessing failed for {} subject(s):\n{}", .0.len(), list_failures(.0))]
    Preprocess(Vec<(String, String)>),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("checkpoint does not fit the input: {0}")]
    Incompatible(String),
    #[error("subject ids differ: missing predictions {missing:?}, unknown predictions {unknown:?}")]
    IdMismatch { missing: Vec<String>, unknown: Vec<String> },
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Nifti(#[from] NiftiError),
    #[error("{0}")]
    Other(String),
}

fn list_failures(f: &[(String, String)]) -> String {
    f.iter()
        .map(|(id, e)| format!("  {id}: {e}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl PipelineError {
    /// Process exit status for this error family.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Preprocess(_) => 3,
            PipelineError::Divergence(_) => 4,
            PipelineError::Incompatible(_) => 5,
            PipelineError::IdMismatch { .. } => 6,
            PipelineError::Render(RenderError::SliceOutOfRange { .. }) => 7,
            _ => 1,
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

pub fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    if jobs == 0 {
        return Err(PipelineError::Config("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| PipelineError::Other(e.to_string()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomArgs {
    pub n_fdg: usize,
    pub n_psma: usize,
    pub seed: u64,
    pub lesion_rate: f64,
    pub dims: [usize; 3],
}

impl PhantomArgs {
    pub fn new(n_fdg: usize, n_psma: usize, seed: u64) -> Self {
        Self {
            n_fdg,
            n_psma,
            seed,
            lesion_rate: 1.0,
            dims: DEFAULT_DIMS,
        }
    }
}

/// Writes a synthetic cohort and its manifest under `out`.
pub fn cmd_phantom(out: &Path, args: &PhantomArgs, jobs: usize) -> Result<Manifest> {
    if !(0.0..=1.0).contains(&args.lesion_rate) {
        return Err(PipelineError::Config(format!(
            "lesion rate {} outside [0, 1]",
            args.lesion_rate
        )));
    }
    if args.n_fdg + args.n_psma == 0 {
        return Err(PipelineError::Config("cohort must have at least one subject".into()));
    }
    let specs = cohort_specs(args.n_fdg, args.n_psma, args.lesion_rate, args.seed, args.dims);
    for s in &specs {
        s.validate()
            .map_err(|e: PhantomError| PipelineError::Config(e.to_string()))?;
    }
    create_dir(out)?;
    let entries = thread_pool(jobs)?.install(|| {
        specs
            .par_iter()
            .enumerate()
            .map(|(i, spec)| {
                let rec = generate_phantom(spec, subject_id(i)).map_err(|e| PipelineError::Config(e.to_string()))?;
                Ok(save_subject(out, &rec, Some(spec.lesion_count))?)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let m = Manifest {
        stage: Stage::Raw,
        subjects: entries,
    };
    write_manifest(out, &m)?;
    Ok(m)
}

/// Body crop and CT clipping of every subject in `input`, written to
/// `output` with a crop sidecar per subject.
pub fn cmd_preprocess(input: &Path, output: &Path, cfg: &PreprocessConfig, jobs: usize) -> Result<Manifest> {
    if !(cfg.clip_lo < cfg.clip_hi) {
        return Err(PipelineError::Config(format!(
            "clip range [{}, {}]",
            cfg.clip_lo, cfg.clip_hi
        )));
    }
    let m = read_manifest(input)?;
    if m.stage != Stage::Raw {
        return Err(PipelineError::Config(format!(
            "{} is already preprocessed",
            input.display()
        )));
    }
    create_dir(output)?;
    let results: Vec<std::result::Result<_, (String, String)>> = thread_pool(jobs)?.install(|| {
        m.subjects
            .par_iter()
            .map(|e| {
                let fail = |err: String| (e.id.clone(), err);
                let rec = load_subject(input, e).map_err(|x| fail(x.to_string()))?;
                let (out, crop) = preprocess_subject(&rec, cfg).map_err(|x| fail(x.to_string()))?;
                let mut entry = save_subject(output, &out, e.lesion_count).map_err(|x| fail(x.to_string()))?;
                let side = CropSidecar {
                    id: e.id.clone(),
                    offset: crop.lo,
                    original_dims: rec.dims(),
                    cropped_dims: crop.cropped_dims(),
                    threshold: cfg.threshold,
                    clip: [cfg.clip_lo, cfg.clip_hi],
                };
                let rel = format!("{}/{CROP_FILE}", e.id);
                write_json(&output.join(&rel), &side).map_err(|x| fail(x.to_string()))?;
                entry.crop = Some(rel);
                Ok(entry)
            })
            .collect()
    });
    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(e) => entries.push(e),
            Err(f) => failures.push(f),
        }
    }
    if !failures.is_empty() {
        return Err(PipelineError::Preprocess(failures));
    }
    let out = Manifest {
        stage: Stage::Preprocessed,
        subjects: entries,
    };
    write_manifest(output, &out)?;
    Ok(out)
}

/// Loads every subject of a cohort in manifest order.
pub fn load_cohort(dir: &Path, jobs: usize) -> Result<(Manifest, Vec<petct_core::SubjectRecord>)> {
    let m = read_manifest(dir)?;
    let recs = thread_pool(jobs)?.install(|| {
        m.subjects
            .par_iter()
            .map(|e| load_subject(dir, e))
            .collect::<std::result::Result<Vec<_>, _>>()
    })?;
    Ok((m, recs))
}

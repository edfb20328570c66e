use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use petct_core::eval::{dice, report_folds, sliding_window_predict, EvalError, FoldReport};
use petct_core::nn::{Arch, Model, ParamStore};
use petct_core::preprocess::{preprocess_subject, PreprocessConfig};
use petct_core::train::{predict_tracer_logit, FoldSplit};
use petct_core::volume::VolumeKind;
use petct_core::{SubjectRecord, Tracer, Volume3D};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{thread_pool, PipelineError, Result};
use crate::checkpoint::{Checkpoint, Task};
use crate::cohort::{create_dir, load_subject, read_json, read_manifest, write_json, Stage};
use crate::nifti::{read_nifti, write_nifti};
use crate::render::{render_overlay, RgbImage};

/// Which checkpoints produce the masks.
#[derive(Clone, Debug, PartialEq)]
pub enum InferModels {
    Single(PathBuf),
    /// Tracer classifier routing each subject to one of two segmenters.
    Routed {
        classifier: PathBuf,
        fdg: PathBuf,
        psma: PathBuf,
    },
}

struct Loaded {
    model: Model,
    store: ParamStore<f32>,
    input_size: [usize; 3],
}

fn load(path: &Path, want: Task) -> Result<Loaded> {
    let c = Checkpoint::load(path)?;
    if c.header.task != want {
        return Err(PipelineError::Incompatible(format!(
            "{} holds a {:?} model, expected {want:?}",
            path.display(),
            c.header.task
        )));
    }
    let model = c.model()?;
    let seg = model.spec().arch != Arch::DenseNetCls && model.spec().in_channels == 2;
    if seg != (want == Task::Segment) {
        return Err(PipelineError::Incompatible(format!(
            "{}: architecture does not match its task",
            path.display()
        )));
    }
    let [x, y, z] = c.header.input_size;
    model
        .check_input([z, y, x])
        .map_err(|e| PipelineError::Incompatible(format!("{}: {e}", path.display())))?;
    Ok(Loaded {
        model,
        store: c.store,
        input_size: c.header.input_size,
    })
}

/// Per-subject result of `cmd_infer`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferRecord {
    pub id: String,
    pub tracer: Option<Tracer>,
    pub positive_voxels: usize,
    pub seconds: f64,
}

fn eval_err(e: EvalError) -> PipelineError {
    match e {
        EvalError::ConfigMismatch(m) => PipelineError::Incompatible(m),
        other => PipelineError::Other(other.to_string()),
    }
}

/// Predicts a mask on the original grid of every selected subject of the
/// cohort in `input` and writes `<output>/<id>.nii.gz`. Raw cohorts are
/// cropped and clipped with `pcfg` first.
pub fn cmd_infer(
    models: &InferModels,
    input: &Path,
    output: &Path,
    ids: Option<&[String]>,
    pcfg: &PreprocessConfig,
    overlap: f64,
    jobs: usize,
) -> Result<Vec<InferRecord>> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(PipelineError::Config(format!("overlap {overlap} outside [0, 1)")));
    }
    let (router, seg) = match models {
        InferModels::Single(p) => (None, vec![load(p, Task::Segment)?]),
        InferModels::Routed { classifier, fdg, psma } => (
            Some(load(classifier, Task::Classify)?),
            vec![load(fdg, Task::Segment)?, load(psma, Task::Segment)?],
        ),
    };
    let m = read_manifest(input)?;
    let entries: Vec<_> = match ids {
        Some(ids) => ids
            .iter()
            .map(|id| m.entry(id).cloned())
            .collect::<std::result::Result<_, _>>()?,
        None => m.subjects.clone(),
    };
    create_dir(output)?;
    thread_pool(jobs)?.install(|| {
        entries
            .par_iter()
            .map(|e| {
                let t0 = Instant::now();
                let raw = load_subject(input, e)?;
                let rec: SubjectRecord = match m.stage {
                    Stage::Raw => {
                        preprocess_subject(&raw, pcfg)
                            .map_err(|x| PipelineError::Preprocess(vec![(e.id.clone(), x.to_string())]))?
                            .0
                    }
                    Stage::Preprocessed => raw,
                };
                let (tracer, net) = match &router {
                    None => (None, &seg[0]),
                    Some(r) => {
                        let logit = predict_tracer_logit(&r.model, &r.store, &rec, r.input_size)
                            .map_err(|x| PipelineError::Incompatible(x.to_string()))?;
                        if logit > 0.0 {
                            (Some(Tracer::Psma), &seg[1])
                        } else {
                            (Some(Tracer::Fdg), &seg[0])
                        }
                    }
                };
                let mask =
                    sliding_window_predict(&net.model, &net.store, &rec, net.input_size, overlap).map_err(eval_err)?;
                write_nifti(&mask, &output.join(format!("{}.nii.gz", e.id)))?;
                Ok(InferRecord {
                    id: e.id.clone(),
                    tracer,
                    positive_voxels: mask.count_nonzero(),
                    seconds: t0.elapsed().as_secs_f64(),
                })
            })
            .collect()
    })
}

/// Report plus the per-subject scores it was built from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationOutput {
    pub report: FoldReport,
    pub scores: Vec<(String, usize, f64)>,
}

fn prediction_ids(dir: &Path) -> Result<BTreeSet<String>> {
    let rd = fs::read_dir(dir).map_err(|e| PipelineError::Other(format!("{}: {e}", dir.display())))?;
    let mut ids = BTreeSet::new();
    for ent in rd {
        let name = ent.map_err(|e| PipelineError::Other(e.to_string()))?.file_name();
        let name = name.to_string_lossy();
        if let Some(id) = name.strip_suffix(".nii.gz").or_else(|| name.strip_suffix(".nii")) {
            ids.insert(id.to_string());
        }
    }
    Ok(ids)
}

/// Dice of every prediction in `pred_dir` against the labels of the cohort
/// in `truth_dir`, grouped into folds by `folds` (a single fold without it).
pub fn cmd_evaluate(
    pred_dir: &Path,
    truth_dir: &Path,
    folds: Option<&Path>,
    name: &str,
    output: Option<&Path>,
) -> Result<EvaluationOutput> {
    let m = read_manifest(truth_dir)?;
    let truth: BTreeSet<String> = m.subjects.iter().map(|e| e.id.clone()).collect();
    let preds = prediction_ids(pred_dir)?;
    if truth != preds {
        return Err(PipelineError::IdMismatch {
            missing: truth.difference(&preds).cloned().collect(),
            unknown: preds.difference(&truth).cloned().collect(),
        });
    }
    let split: Option<FoldSplit> = folds.map(read_json).transpose()?;
    let fold_count = split.as_ref().map_or(1, |s| s.fold_count);
    let mut groups = vec![Vec::new(); fold_count];
    let mut scores = Vec::new();
    for e in &m.subjects {
        let label_path = e
            .label
            .as_ref()
            .ok_or_else(|| PipelineError::Config(format!("subject {} has no label", e.id)))?;
        let truth = read_nifti(&truth_dir.join(label_path), VolumeKind::Label)?;
        let pred_path = [".nii.gz", ".nii"]
            .iter()
            .map(|ext| pred_dir.join(format!("{}{ext}", e.id)))
            .find(|p| p.exists())
            .expect("listed above");
        let pred: Volume3D = read_nifti(&pred_path, VolumeKind::Label)?;
        let d = dice(&pred, &truth).map_err(|x| PipelineError::Incompatible(format!("{}: {x}", e.id)))?;
        let fold = match &split {
            None => 0,
            Some(s) => s.fold_of(&e.id).ok_or_else(|| PipelineError::IdMismatch {
                missing: vec![],
                unknown: vec![e.id.clone()],
            })?,
        };
        groups[fold].push(d);
        scores.push((e.id.clone(), fold, d));
    }
    let report = report_folds(name, &groups).map_err(|x| PipelineError::Config(x.to_string()))?;
    let out = EvaluationOutput { report, scores };
    if let Some(dir) = output {
        create_dir(dir)?;
        write_json(&dir.join("report.json"), &out)?;
        fs::write(dir.join("report.txt"), out.report.to_table())
            .map_err(|e| PipelineError::Other(format!("{}: {e}", dir.display())))?;
    }
    Ok(out)
}

/// Axial overlay of `mask` (or none) on subject `id` of the cohort in
/// `input`, written to `out` as PPM.
pub fn cmd_render(input: &Path, id: &str, mask: Option<&Path>, out: &Path, slice: usize) -> Result<RgbImage> {
    let m = read_manifest(input)?;
    let rec = load_subject(input, m.entry(id)?)?;
    let mask = mask.map(|p| read_nifti(p, VolumeKind::Label)).transpose()?;
    if let Some(mk) = &mask {
        rec.ct
            .same_dims(mk)
            .map_err(|e| PipelineError::Incompatible(format!("mask vs subject {id}: {e}")))?;
    }
    let img = render_overlay(&rec.ct, &rec.pet, mask.as_ref(), slice)?;
    img.write_ppm(out)?;
    Ok(img)
}

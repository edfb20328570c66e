use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use petct_core::nn::{audit_shapes, Model, ModelSpec, ParamStore, ShapeReport};
use petct_core::train::{
    make_folds, predict_tracer_logit, train_classifier, train_segmenter, EpochRecord, FoldSplit, TrainConfig,
    TrainError, TrainHooks, TrainOutcome, FOLD_COUNT,
};
use petct_core::{SubjectRecord, Tracer};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{load_cohort, thread_pool, PipelineError, Result};
use crate::checkpoint::{Checkpoint, Task};
use crate::cohort::{create_dir, write_json, Stage};
use crate::config::{FoldSelect, PipelineConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum TrainTask {
    Segment,
    Classify,
    ClassifyThenSegment,
}

pub const FOLDS_FILE: &str = "folds.json";
pub const LOG_FILE: &str = "log.jsonl";
pub const CHECKPOINT_FILE: &str = "best.ckpt";
pub const ROUTING_FILE: &str = "routing.json";

/// Outcome of one (model, fold) training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub fold: usize,
    pub best_epoch: usize,
    pub best_metric: Option<f64>,
    pub checkpoint: PathBuf,
}

/// Appends each epoch to a JSON-lines log as it completes.
struct LogHooks {
    start: Instant,
    wall_time: bool,
    out: BufWriter<File>,
    label: String,
    epochs: usize,
}

impl LogHooks {
    fn create(path: &Path, wall_time: bool, label: String, epochs: usize) -> Result<Self> {
        let f = File::create(path).map_err(|e| PipelineError::Other(format!("{}: {e}", path.display())))?;
        Ok(Self {
            start: Instant::now(),
            wall_time,
            out: BufWriter::new(f),
            label,
            epochs,
        })
    }

    fn line<T: Serialize>(&mut self, v: &T) {
        // A failed log write must not abort a long run; it is reported instead.
        let res = serde_json::to_writer(&mut self.out, v)
            .map_err(std::io::Error::from)
            .and_then(|_| self.out.write_all(b"\n"))
            .and_then(|_| self.out.flush());
        if let Err(e) = res {
            eprintln!("{}: log write failed: {e}", self.label);
        }
    }
}

impl TrainHooks for LogHooks {
    fn now_ms(&mut self) -> u64 {
        if self.wall_time {
            self.start.elapsed().as_millis() as u64
        } else {
            0
        }
    }

    fn on_epoch(&mut self, rec: &EpochRecord) {
        eprintln!(
            "{} epoch {}/{} lr {:.3e} loss {:.4} val {:.4}",
            self.label,
            rec.epoch + 1,
            self.epochs,
            rec.lr,
            rec.train_loss,
            rec.val_metric
        );
        self.line(rec);
    }
}

#[derive(Serialize)]
struct DivergenceLine {
    divergence: DivergenceInfo,
}

#[derive(Serialize)]
struct DivergenceInfo {
    epoch: usize,
    iter: usize,
    loss: f64,
}

fn train_error(e: TrainError) -> PipelineError {
    match e {
        TrainError::Divergence { .. } => PipelineError::Divergence(e.to_string()),
        other => PipelineError::Config(other.to_string()),
    }
}

struct RunCtx<'a> {
    cfg: &'a PipelineConfig,
    split: &'a FoldSplit,
}

impl RunCtx<'_> {
    fn run(
        &self,
        name: &str,
        fold: usize,
        task: Task,
        spec: &ModelSpec,
        tcfg: &TrainConfig,
        subjects: &[SubjectRecord],
    ) -> Result<(RunSummary, Model, TrainOutcome)> {
        let dir = self.cfg.work_dir.join(name).join(format!("fold{fold}"));
        create_dir(&dir)?;
        let model = Model::build(spec).map_err(|e| PipelineError::Config(e.to_string()))?;
        let init = ParamStore::init(&model, self.cfg.seed);
        let label = format!("{name} fold {fold}");
        let mut hooks = LogHooks::create(&dir.join(LOG_FILE), self.cfg.log_wall_time, label, tcfg.epochs)?;
        let res = match task {
            Task::Segment => train_segmenter(&model, init, subjects, self.split, fold, tcfg, &mut hooks),
            Task::Classify => train_classifier(&model, init, subjects, self.split, fold, tcfg, &mut hooks),
        };
        let outcome = match res {
            Ok(o) => o,
            Err(TrainError::Divergence { epoch, iter, loss }) => {
                hooks.line(&DivergenceLine {
                    divergence: DivergenceInfo { epoch, iter, loss },
                });
                eprintln!("{name} fold {fold}: loss {loss} at epoch {epoch}, iteration {iter}");
                return Err(train_error(TrainError::Divergence { epoch, iter, loss }));
            }
            Err(e) => return Err(train_error(e)),
        };
        let ckpt = Checkpoint::new(
            &model,
            outcome.best.clone(),
            task,
            tcfg.patch_size,
            outcome.best_epoch,
            outcome.best_metric,
        )?;
        let path = dir.join(CHECKPOINT_FILE);
        ckpt.save(&path)?;
        let summary = RunSummary {
            name: name.into(),
            fold,
            best_epoch: outcome.best_epoch,
            best_metric: ckpt.header.metric,
            checkpoint: path,
        };
        Ok((summary, model, outcome))
    }

    /// Classifier, routing by predicted tracer, then one segmenter per
    /// predicted class.
    fn run_routed(
        &self,
        fold: usize,
        seg_spec: &ModelSpec,
        seg_cfg: &TrainConfig,
        subjects: &[SubjectRecord],
    ) -> Result<Vec<RunSummary>> {
        let cls_cfg = self.cfg.classifier_train();
        let (cls, model, outcome) = self.run(
            "classify",
            fold,
            Task::Classify,
            &self.cfg.classifier_spec(),
            &cls_cfg,
            subjects,
        )?;
        let mut routing = BTreeMap::new();
        for s in subjects {
            let logit = predict_tracer_logit(&model, &outcome.best, s, cls_cfg.patch_size).map_err(train_error)?;
            routing.insert(s.id.clone(), if logit > 0.0 { Tracer::Psma } else { Tracer::Fdg });
        }
        write_json(
            &self
                .cfg
                .work_dir
                .join("classify")
                .join(format!("fold{fold}"))
                .join(ROUTING_FILE),
            &routing,
        )?;
        let mut out = vec![cls];
        for tracer in [Tracer::Fdg, Tracer::Psma] {
            let part: Vec<SubjectRecord> = subjects.iter().filter(|s| routing[&s.id] == tracer).cloned().collect();
            let name = format!("segment_{}", tracer.as_str().to_lowercase());
            out.push(self.run(&name, fold, Task::Segment, seg_spec, seg_cfg, &part)?.0);
        }
        Ok(out)
    }
}

/// Trains the requested models on the preprocessed cohort in
/// `cfg.input_dir`, one run per selected fold.
pub fn cmd_train(cfg: &PipelineConfig, task: TrainTask, jobs: usize) -> Result<Vec<RunSummary>> {
    let (manifest, subjects) = load_cohort(&cfg.input_dir, jobs)?;
    if manifest.stage != Stage::Preprocessed {
        return Err(PipelineError::Config(format!(
            "{} is not a preprocessed cohort",
            cfg.input_dir.display()
        )));
    }
    let folds: Vec<usize> = match cfg.fold {
        FoldSelect::All => (0..FOLD_COUNT).collect(),
        FoldSelect::One(k) if k < FOLD_COUNT => vec![k],
        FoldSelect::One(k) => return Err(PipelineError::Config(format!("fold {k} outside 0..{FOLD_COUNT}"))),
    };
    let seg = match task {
        TrainTask::Classify => None,
        _ => Some((
            cfg.segmenter_spec().map_err(PipelineError::Config)?,
            cfg.segmenter_train().map_err(PipelineError::Config)?,
        )),
    };
    let split = make_folds(&subjects, cfg.seed).map_err(train_error)?;
    create_dir(&cfg.work_dir)?;
    write_json(&cfg.work_dir.join(FOLDS_FILE), &split)?;
    let ctx = RunCtx { cfg, split: &split };
    let per_fold = thread_pool(jobs)?.install(|| {
        folds
            .par_iter()
            .map(|&k| match (task, &seg) {
                (TrainTask::Segment, Some((spec, tcfg))) => {
                    Ok(vec![ctx.run("segment", k, Task::Segment, spec, tcfg, &subjects)?.0])
                }
                (TrainTask::ClassifyThenSegment, Some((spec, tcfg))) => ctx.run_routed(k, spec, tcfg, &subjects),
                _ => {
                    let tcfg = cfg.classifier_train();
                    Ok(vec![
                        ctx.run("classify", k, Task::Classify, &cfg.classifier_spec(), &tcfg, &subjects)?
                            .0,
                    ])
                }
            })
            .collect::<Vec<Result<Vec<RunSummary>>>>()
    });
    let mut all = Vec::new();
    for r in per_fold {
        all.extend(r?);
    }
    Ok(all)
}

/// Closed-form shape reports of the models `task` would train, at the
/// profile's input size.
pub fn cmd_shapes(cfg: &PipelineConfig, task: TrainTask) -> Result<Vec<(String, ModelSpec, ShapeReport)>> {
    let mut out = Vec::new();
    let audit =
        |spec: &ModelSpec, dims: [usize; 3]| audit_shapes(spec, dims).map_err(|e| PipelineError::Config(e.to_string()));
    if task != TrainTask::Segment {
        let spec = cfg.classifier_spec();
        let r = audit(&spec, cfg.classifier_train().patch_size)?;
        out.push(("classify".to_string(), spec, r));
    }
    if task != TrainTask::Classify {
        let spec = cfg.segmenter_spec().map_err(PipelineError::Config)?;
        let r = audit(&spec, cfg.segmenter_train().map_err(PipelineError::Config)?.patch_size)?;
        out.push(("segment".to_string(), spec, r));
    }
    Ok(out)
}

fn dims_str(d: [usize; 3]) -> String {
    format!("{}x{}x{}", d[0], d[1], d[2])
}

/// Plain-text stage table.
pub fn format_shape_report(name: &str, spec: &ModelSpec, r: &ShapeReport) -> String {
    let mut s = format!(
        "{name}: {:?}, input {}, {} parameters\n",
        r.arch,
        dims_str(r.input_dims),
        r.param_count
    );
    s.push_str("stage  blocks  channels  dims\n");
    for (i, (d, c)) in r.stage_dims.iter().zip(&r.stage_channels).enumerate() {
        s.push_str(&format!(
            "{i:>5}  {:>6}  {c:>8}  {}\n",
            spec.blocks_per_stage[i],
            dims_str(*d)
        ));
    }
    for (j, d) in r.head_dims.iter().enumerate() {
        s.push_str(&format!("head {j}: {}\n", dims_str(*d)));
    }
    s
}

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::loss::{loss_bce, loss_deep_supervision, loss_dice_ce};
use super::optim::{optimizer_step, OptimizerKind, OptimizerState};
use super::sampling::PatchSampler;
use super::{lr_schedule, FoldSplit, TrainConfig, TrainError};
use crate::eval::{dice_slices, roc_auc, sliding_window_probs, ModelPredictor};
use crate::nn::{Arch, GraphBackend, Model, ParamStore};
use crate::preprocess::{resize_trilinear, zscore};
use crate::rng;
use crate::tensor::{Graph, Tensor, Var};
use crate::volume::SubjectRecord;

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_metric: f64,
    pub wall_ms: u64,
}

/// Clock and progress callbacks; the core crate has no clock of its own.
pub trait TrainHooks {
    fn now_ms(&mut self) -> u64 {
        0
    }

    fn on_epoch(&mut self, _rec: &EpochRecord) {}
}

pub struct NoHooks;

impl TrainHooks for NoHooks {}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// Weights at the best validation epoch (earliest on ties).
    pub best: ParamStore<f32>,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub last: ParamStore<f32>,
    pub log: Vec<EpochRecord>,
}

const SAMPLE_STREAM: u64 = 0x5A3E;
const VAL_STREAM: u64 = 0x7A1;
const DROPOUT_STREAM: u64 = 0xD40;

/// Losses above this are treated like NaN. Adam bounds every step by the
/// learning rate, so a runaway rate inflates logits without ever
/// overflowing; no working model comes near this value with either loss.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

fn diverged(loss: f64) -> bool {
    !(loss <= DIVERGENCE_LIMIT)
}

/// Forward, loss and backward on one batch. Returns the loss value and the
/// parameter gradients in store order.
fn compute_grads<F>(
    model: &Model,
    store: &ParamStore<f32>,
    x: Tensor<f32>,
    dropout_key: [u64; 2],
    loss_of: F,
) -> Result<(f64, Vec<Vec<f32>>), TrainError>
where
    F: FnOnce(&mut Graph<f32>, &[Var]) -> Result<Var, TrainError>,
{
    let mut g = Graph::new();
    let xv = g.input(x);
    let mut b = GraphBackend::new(&mut g, store, true, dropout_key);
    let heads = model.forward(&mut b, xv)?;
    let loss = loss_of(b.graph, &heads)?;
    let value = b.graph.data(loss)[0] as f64;
    if !value.is_finite() {
        return Ok((value, Vec::new()));
    }
    let grads = b.graph.backward(loss)?;
    Ok((value, b.param_grads(&grads)))
}

/// Label batch `[N, D, H, W]` downsampled by any-voxel max pooling for each
/// deep-supervision head.
pub fn segmentation_targets(label: &[f32], n: usize, dims: [usize; 3], heads: usize) -> Vec<Vec<f32>> {
    let mut out = vec![label.to_vec()];
    let mut cur = dims;
    for _ in 1..heads {
        let prev = out.last().unwrap();
        let next_dims = cur.map(|d| d / 2);
        let [d, h, w] = cur;
        let [od, oh, ow] = next_dims;
        let mut next = vec![0.0f32; n * od * oh * ow];
        for s in 0..n {
            for z in 0..od {
                for y in 0..oh {
                    for x in 0..ow {
                        let mut m = 0.0f32;
                        for (dz, dy, dx) in (0..8).map(|k| (k >> 2, (k >> 1) & 1, k & 1)) {
                            m = m.max(prev[s * d * h * w + ((2 * z + dz) * h + 2 * y + dy) * w + 2 * x + dx]);
                        }
                        next[s * od * oh * ow + (z * oh + y) * ow + x] = m;
                    }
                }
            }
        }
        out.push(next);
        cur = next_dims;
    }
    out
}

fn seg_loss(g: &mut Graph<f32>, heads: &[Var], targets: &[Vec<f32>]) -> Result<Var, TrainError> {
    let losses = heads
        .iter()
        .zip(targets)
        .map(|(&h, t)| loss_dice_ce(g, h, t))
        .collect::<Result<Vec<_>, _>>()?;
    loss_deep_supervision(g, &losses)
}

struct SegSubject {
    dims: [usize; 3],
    ct: Vec<f32>,
    pet: Vec<f32>,
    label: Vec<f32>,
}

impl SegSubject {
    fn new(rec: &SubjectRecord) -> Self {
        let n = rec.ct.len();
        Self {
            dims: rec.dims(),
            ct: zscore(&rec.ct).0.into_data(),
            pet: zscore(&rec.pet).0.into_data(),
            label: rec.label.as_ref().map_or_else(|| vec![0.0; n], |l| l.data().to_vec()),
        }
    }

    fn sampler(&self) -> PatchSampler<'_> {
        PatchSampler::new(&self.ct, &self.pet, Some(&self.label), self.dims)
    }
}

/// Draws `batch` windows; returns the input tensor `[B, 2, pz, py, px]` and
/// the stacked labels.
fn seg_batch(
    samplers: &[PatchSampler<'_>],
    patch: [usize; 3],
    batch: usize,
    r: &mut rng::Rng,
    fg: f64,
) -> (Tensor<f32>, Vec<f32>) {
    let pn: usize = patch.iter().product();
    let mut x = Vec::with_capacity(batch * 2 * pn);
    let mut y = Vec::with_capacity(batch * pn);
    for _ in 0..batch {
        let s = &samplers[r.random_range(0..samplers.len())];
        let p = s.sample(patch, r, fg);
        x.extend_from_slice(&p.ct);
        x.extend_from_slice(&p.pet);
        y.extend_from_slice(&p.label);
    }
    let t = Tensor::new(vec![batch, 2, patch[2], patch[1], patch[0]], x).expect("batch shape");
    (t, y)
}

fn split_indices(
    subjects: &[SubjectRecord],
    split: &FoldSplit,
    fold: usize,
) -> Result<(Vec<usize>, Vec<usize>), TrainError> {
    split.check_fold(fold)?;
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (i, s) in subjects.iter().enumerate() {
        match split.fold_of(&s.id) {
            Some(f) if f == fold => val.push(i),
            Some(_) => train.push(i),
            None => {
                return Err(TrainError::ConfigMismatch(format!(
                    "subject {} not in the fold split",
                    s.id
                )))
            }
        }
    }
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::TooFewSubjects {
            need: 2,
            got: train.len() + val.len(),
        });
    }
    Ok((train, val))
}

fn zyx(p: [usize; 3]) -> [usize; 3] {
    [p[2], p[1], p[0]]
}

fn better(a: f64, b: f64) -> bool {
    a > b || (b.is_nan() && !a.is_nan())
}

struct Tracker {
    best: Option<(usize, f64, ParamStore<f32>)>,
    log: Vec<EpochRecord>,
}

impl Tracker {
    fn record<H: TrainHooks>(&mut self, rec: EpochRecord, store: &ParamStore<f32>, hooks: &mut H) {
        hooks.on_epoch(&rec);
        let take = match &self.best {
            None => true,
            Some((_, m, _)) => better(rec.val_metric, *m),
        };
        if take {
            self.best = Some((rec.epoch, rec.val_metric, store.clone()));
        }
        self.log.push(rec);
    }

    fn finish(self, last: ParamStore<f32>) -> TrainOutcome {
        let (best_epoch, best_metric, best) = self.best.expect("at least one epoch");
        TrainOutcome {
            best,
            best_epoch,
            best_metric,
            last,
            log: self.log,
        }
    }
}

/// Trains a segmenter on every fold except `fold` and validates on `fold`.
///
/// Inputs are cropped, clipped records; each channel is z-scored per
/// volume here. Validation is the pooled Dice over a fixed set of sampled
/// windows when `val_iters_per_epoch` is set, otherwise the mean per-subject
/// Dice of sliding-window predictions on the held-out volumes.
pub fn train_segmenter<H: TrainHooks>(
    model: &Model,
    init: ParamStore<f32>,
    subjects: &[SubjectRecord],
    split: &FoldSplit,
    fold: usize,
    cfg: &TrainConfig,
    hooks: &mut H,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let spec = model.spec();
    if spec.arch == Arch::DenseNetCls || spec.in_channels != 2 || spec.out_channels != 2 {
        return Err(TrainError::ConfigMismatch(
            "segmenter needs a two-channel, two-class model".into(),
        ));
    }
    model
        .check_input(zyx(cfg.patch_size))
        .map_err(|e| TrainError::ConfigMismatch(format!("patch {:?}: {e}", cfg.patch_size)))?;
    init.check(model)?;
    let (train_idx, val_idx) = split_indices(subjects, split, fold)?;
    let prepared: Vec<SegSubject> = subjects.iter().map(SegSubject::new).collect();
    let train_s: Vec<PatchSampler<'_>> = train_idx.iter().map(|&i| prepared[i].sampler()).collect();
    let val_s: Vec<PatchSampler<'_>> = val_idx.iter().map(|&i| prepared[i].sampler()).collect();
    let patch = cfg.patch_size;
    let heads = spec.deep_supervision_levels;
    let iters = cfg.iters_per_epoch.unwrap_or(train_idx.len().div_ceil(cfg.batch_size));

    let val_batches: Vec<(Tensor<f32>, Vec<f32>)> = match cfg.val_iters_per_epoch {
        Some(v) => {
            let mut r = rng::stream(&[cfg.seed, VAL_STREAM]);
            (0..v)
                .map(|_| seg_batch(&val_s, patch, cfg.batch_size, &mut r, cfg.fg_oversample))
                .collect()
        }
        None => Vec::new(),
    };

    let mut store = init;
    let mut state = OptimizerState::new(cfg.optimizer, cfg.weight_decay, &store);
    let mut tracker = Tracker {
        best: None,
        log: Vec::new(),
    };
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let t0 = hooks.now_ms();
        let lr = lr_schedule(cfg.schedule, epoch, cfg.epochs, cfg.lr_initial)?;
        let mut r = rng::stream(&[cfg.seed, SAMPLE_STREAM, epoch as u64]);
        let mut loss_sum = 0.0;
        for iter in 0..iters {
            let (x, y) = seg_batch(&train_s, patch, cfg.batch_size, &mut r, cfg.fg_oversample);
            let targets = segmentation_targets(&y, cfg.batch_size, zyx(patch), heads);
            let (loss, grads) = compute_grads(model, &store, x, [cfg.seed ^ DROPOUT_STREAM, step], |g, h| {
                seg_loss(g, h, &targets)
            })?;
            if diverged(loss) {
                return Err(TrainError::Divergence { epoch, iter, loss });
            }
            optimizer_step(&mut store, &grads, &mut state, lr)?;
            loss_sum += loss;
            step += 1;
        }
        let val_metric = if cfg.val_iters_per_epoch.is_some() {
            pseudo_dice(model, &store, &val_batches)?
        } else {
            let mut total = 0.0;
            for &i in &val_idx {
                let p = &prepared[i];
                let out = sliding_window_probs(
                    &[p.ct.clone(), p.pet.clone()],
                    p.dims,
                    patch,
                    crate::eval::DEFAULT_OVERLAP,
                    &mut ModelPredictor { model, store: &store },
                )?;
                let mask: Vec<f32> = out.prob.iter().map(|&v| if v > 0.5 { 1.0 } else { 0.0 }).collect();
                total += dice_slices(&mask, &p.label);
            }
            total / val_idx.len() as f64
        };
        let rec = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / iters as f64,
            val_metric,
            wall_ms: hooks.now_ms().saturating_sub(t0),
        };
        tracker.record(rec, &store, hooks);
    }
    Ok(tracker.finish(store))
}

/// Dice pooled over all voxels of the validation windows, full-resolution
/// head, foreground where its logit wins.
fn pseudo_dice(model: &Model, store: &ParamStore<f32>, batches: &[(Tensor<f32>, Vec<f32>)]) -> Result<f64, TrainError> {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (x, y) in batches {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let mut b = GraphBackend::new(&mut g, store, false, [0, 0]);
        let heads = model.forward(&mut b, xv)?;
        let logits = b.graph.data(heads[0]);
        let m = y.len() / x.shape()[0];
        for (k, &t) in y.iter().enumerate() {
            let (s, i) = (k / m, k % m);
            let pred = logits[(2 * s + 1) * m + i] > logits[2 * s * m + i];
            let truth = t != 0.0;
            tp += (pred && truth) as usize;
            fp += (pred && !truth) as usize;
            fneg += (!pred && truth) as usize;
        }
    }
    Ok(if tp + fp + fneg == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
    })
}

/// Classifier input: PET resized to `target` (x, y, z) and z-scored.
pub fn classifier_input(rec: &SubjectRecord, target: [usize; 3]) -> Result<Vec<f32>, TrainError> {
    let resized = resize_trilinear(&rec.pet, target)?;
    Ok(zscore(&resized).0.into_data())
}

fn eval_logit(model: &Model, store: &ParamStore<f32>, x: &[f32], dims: [usize; 3]) -> Result<f64, TrainError> {
    let mut g = Graph::new();
    let t = Tensor::new(vec![1, 1, dims[2], dims[1], dims[0]], x.to_vec())?;
    let xv = g.input(t);
    let mut b = GraphBackend::new(&mut g, store, false, [0, 0]);
    let out = model.forward(&mut b, xv)?;
    Ok(b.graph.data(out[0])[0] as f64)
}

/// Classifier logit for one subject; positive favors PSMA.
pub fn predict_tracer_logit(
    model: &Model,
    store: &ParamStore<f32>,
    rec: &SubjectRecord,
    target: [usize; 3],
) -> Result<f64, TrainError> {
    let x = classifier_input(rec, target)?;
    eval_logit(model, store, &x, target)
}

/// Trains the tracer classifier (PSMA positive) on every fold except
/// `fold`; the validation metric is ROC-AUC on the held-out fold, NaN when
/// it holds a single class.
pub fn train_classifier<H: TrainHooks>(
    model: &Model,
    init: ParamStore<f32>,
    subjects: &[SubjectRecord],
    split: &FoldSplit,
    fold: usize,
    cfg: &TrainConfig,
    hooks: &mut H,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let spec = model.spec();
    if spec.arch != Arch::DenseNetCls || spec.in_channels != 1 || spec.out_channels != 1 {
        return Err(TrainError::ConfigMismatch(
            "classifier needs a single-input, single-logit model".into(),
        ));
    }
    let dims = cfg.patch_size;
    model
        .check_input(zyx(dims))
        .map_err(|e| TrainError::ConfigMismatch(format!("resize target {dims:?}: {e}")))?;
    init.check(model)?;
    let (train_idx, val_idx) = split_indices(subjects, split, fold)?;
    let mut inputs = Vec::with_capacity(subjects.len());
    let mut classes = Vec::with_capacity(subjects.len());
    for s in subjects {
        let t = s
            .tracer
            .ok_or_else(|| TrainError::ConfigMismatch(format!("subject {} has no tracer", s.id)))?;
        inputs.push(classifier_input(s, dims)?);
        classes.push(t.class());
    }
    let n: usize = dims.iter().product();
    let iters = cfg.iters_per_epoch.unwrap_or(train_idx.len().div_ceil(cfg.batch_size));
    let mut store = init;
    let mut state = OptimizerState::new(cfg.optimizer, cfg.weight_decay, &store);
    let mut tracker = Tracker {
        best: None,
        log: Vec::new(),
    };
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let t0 = hooks.now_ms();
        let lr = lr_schedule(cfg.schedule, epoch, cfg.epochs, cfg.lr_initial)?;
        let mut r = rng::stream(&[cfg.seed, SAMPLE_STREAM, epoch as u64]);
        let mut loss_sum = 0.0;
        for iter in 0..iters {
            let mut x = Vec::with_capacity(cfg.batch_size * n);
            let mut y = Vec::with_capacity(cfg.batch_size);
            for _ in 0..cfg.batch_size {
                let i = train_idx[r.random_range(0..train_idx.len())];
                x.extend_from_slice(&inputs[i]);
                y.push(classes[i] as f32);
            }
            let x = Tensor::new(vec![cfg.batch_size, 1, dims[2], dims[1], dims[0]], x)?;
            let (loss, grads) = compute_grads(model, &store, x, [cfg.seed ^ DROPOUT_STREAM, step], |g, h| {
                loss_bce(g, h[0], &y)
            })?;
            if diverged(loss) {
                return Err(TrainError::Divergence { epoch, iter, loss });
            }
            optimizer_step(&mut store, &grads, &mut state, lr)?;
            loss_sum += loss;
            step += 1;
        }
        let mut scores = Vec::with_capacity(val_idx.len());
        let mut labels = Vec::with_capacity(val_idx.len());
        for &i in &val_idx {
            scores.push(eval_logit(model, &store, &inputs[i], dims)?);
            labels.push(classes[i]);
        }
        let rec = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / iters as f64,
            val_metric: roc_auc(&scores, &labels)?,
            wall_ms: hooks.now_ms().saturating_sub(t0),
        };
        tracker.record(rec, &store, hooks);
    }
    Ok(tracker.finish(store))
}

/// Fixed-batch overfit run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OverfitSettings {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub max_steps: usize,
    /// The run ends after the first step whose loss is below this.
    pub stop_below: f64,
}

fn overfit_loop<F>(
    model: &Model,
    store: &mut ParamStore<f32>,
    x: &Tensor<f32>,
    run: OverfitSettings,
    loss_fn: F,
) -> Result<Vec<f64>, TrainError>
where
    F: Fn(&mut Graph<f32>, &[Var]) -> Result<Var, TrainError>,
{
    let mut state = OptimizerState::new(run.optimizer, 0.0, store);
    let mut losses = Vec::with_capacity(run.max_steps);
    for s in 0..run.max_steps {
        let (loss, grads) = compute_grads(model, store, x.clone(), [0, s as u64], &loss_fn)?;
        if diverged(loss) {
            return Err(TrainError::Divergence {
                epoch: 0,
                iter: s,
                loss,
            });
        }
        losses.push(loss);
        if loss < run.stop_below {
            break;
        }
        optimizer_step(store, &grads, &mut state, run.lr)?;
    }
    Ok(losses)
}

/// Repeated steps on one fixed segmentation batch; returns the loss of
/// every step.
pub fn overfit_segmenter(
    model: &Model,
    store: &mut ParamStore<f32>,
    x: &Tensor<f32>,
    label: &[f32],
    run: OverfitSettings,
) -> Result<Vec<f64>, TrainError> {
    let n = x.shape()[0];
    let targets = segmentation_targets(
        label,
        n,
        [x.shape()[2], x.shape()[3], x.shape()[4]],
        model.spec().deep_supervision_levels,
    );
    overfit_loop(model, store, x, run, |g, h| seg_loss(g, h, &targets))
}

pub fn overfit_classifier(
    model: &Model,
    store: &mut ParamStore<f32>,
    x: &Tensor<f32>,
    targets: &[f32],
    run: OverfitSettings,
) -> Result<Vec<f64>, TrainError> {
    overfit_loop(model, store, x, run, |g, h| loss_bce(g, h[0], targets))
}

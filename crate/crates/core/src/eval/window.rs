use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float as Fl;

use super::EvalError;
use crate::nn::{Backend, GraphBackend, Model, ParamStore};
use crate::preprocess::{uncrop_volume, zscore};
use crate::tensor::{Graph, Tensor};
use crate::volume::{SubjectRecord, Volume3D, VolumeKind};

pub const DEFAULT_OVERLAP: f64 = 0.5;

/// Produces a foreground probability per voxel for one input window
/// `[1, C, pd, ph, pw]`.
pub trait PatchPredictor {
    fn predict(&mut self, x: &Tensor<f32>) -> Result<Vec<f32>, EvalError>;
}

impl<F> PatchPredictor for F
where
    F: FnMut(&Tensor<f32>) -> Result<Vec<f32>, EvalError>,
{
    fn predict(&mut self, x: &Tensor<f32>) -> Result<Vec<f32>, EvalError> {
        self(x)
    }
}

/// Eval-mode segmenter; the full-resolution head is turned into a
/// foreground probability.
pub struct ModelPredictor<'a> {
    pub model: &'a Model,
    pub store: &'a ParamStore<f32>,
}

impl PatchPredictor for ModelPredictor<'_> {
    fn predict(&mut self, x: &Tensor<f32>) -> Result<Vec<f32>, EvalError> {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let mut b = GraphBackend::new(&mut g, self.store, false, [0, 0]);
        let heads = self.model.forward(&mut b, xv)?;
        let logits = b.graph.data(heads[0]);
        let dims = b.dims(heads[0]);
        let m: usize = dims[2..].iter().product();
        Ok(foreground_probability(logits, dims[1], m))
    }
}

/// Softmax probability of channel 1 (sigmoid for a single channel).
fn foreground_probability(logits: &[f32], channels: usize, m: usize) -> Vec<f32> {
    let sig = |v: f32| 1.0 / (1.0 + Fl::exp(-v));
    match channels {
        1 => logits[..m].iter().map(|&v| sig(v)).collect(),
        _ => (0..m)
            .map(|i| {
                let mx = (0..channels)
                    .map(|c| logits[c * m + i])
                    .fold(f32::NEG_INFINITY, f32::max);
                let den: f32 = (0..channels).map(|c| Fl::exp(logits[c * m + i] - mx)).sum();
                Fl::exp(logits[m + i] - mx) / den
            })
            .collect(),
    }
}

/// Evenly spaced window starts covering `[0, dim)` with step at most
/// `patch·(1 − overlap)`.
pub fn window_starts(dim: usize, patch: usize, overlap: f64) -> Vec<usize> {
    if dim <= patch {
        return vec![0];
    }
    let target = (Fl::floor(patch as f64 * (1.0 - overlap)) as usize).max(1);
    let span = dim - patch;
    let n = span.div_ceil(target) + 1;
    (0..n)
        .map(|i| Fl::floor(span as f64 * i as f64 / (n - 1) as f64 + 0.5) as usize)
        .collect()
}

/// Separable Gaussian window with σ = patch/8 per axis, peak 1, x fastest.
pub fn gaussian_weights(patch: [usize; 3]) -> Vec<f64> {
    let axis = |p: usize| -> Vec<f64> {
        let sigma = p as f64 / 8.0;
        let c = (p as f64 - 1.0) / 2.0;
        (0..p)
            .map(|i| Fl::exp(-(i as f64 - c) * (i as f64 - c) / (2.0 * sigma * sigma)))
            .collect()
    };
    let (wx, wy, wz) = (axis(patch[0]), axis(patch[1]), axis(patch[2]));
    let mut out = Vec::with_capacity(patch.iter().product());
    for &z in &wz {
        for &y in &wy {
            for &x in &wx {
                out.push(x * y * z);
            }
        }
    }
    out
}

/// Blended probabilities and accumulated window weights on the input grid.
pub struct WindowOutput {
    pub dims: [usize; 3],
    pub prob: Vec<f32>,
    pub weight: Vec<f64>,
    pub windows: usize,
}

/// Tiles `channels` (each x-fastest over `dims`) with `patch` windows and
/// blends the predictor output with Gaussian weights. Axes shorter than the
/// patch are padded symmetrically with the channel minimum.
///
/// Window tensors are `[1, C, pz, py, px]`, matching the volume's storage.
pub fn sliding_window_probs<P: PatchPredictor>(
    channels: &[Vec<f32>],
    dims: [usize; 3],
    patch: [usize; 3],
    overlap: f64,
    predictor: &mut P,
) -> Result<WindowOutput, EvalError> {
    if !(0.0..1.0).contains(&overlap) || patch.contains(&0) {
        return Err(EvalError::ConfigMismatch(format!(
            "patch {patch:?} with overlap {overlap}"
        )));
    }
    let n: usize = dims.iter().product();
    if channels.iter().any(|c| c.len() != n) {
        return Err(EvalError::ConfigMismatch("channel length does not match dims".into()));
    }
    let padded: [usize; 3] = core::array::from_fn(|a| dims[a].max(patch[a]));
    let lo: [usize; 3] = core::array::from_fn(|a| (padded[a] - dims[a]) / 2);
    let np: usize = padded.iter().product();
    let pn: usize = patch.iter().product();
    let mins: Vec<f32> = channels
        .iter()
        .map(|c| c.iter().copied().fold(f32::INFINITY, f32::min))
        .collect();
    let gauss = gaussian_weights(patch);
    let mut acc = vec![0.0f64; np];
    let mut wsum = vec![0.0f64; np];
    let starts: [Vec<usize>; 3] = core::array::from_fn(|a| window_starts(padded[a], patch[a], overlap));
    let mut windows = 0;
    let mut buf = vec![0.0f32; channels.len() * pn];
    for &sz in &starts[2] {
        for &sy in &starts[1] {
            for &sx in &starts[0] {
                for (c, ch) in channels.iter().enumerate() {
                    let dst = &mut buf[c * pn..(c + 1) * pn];
                    let mut k = 0;
                    for z in 0..patch[2] {
                        for y in 0..patch[1] {
                            for x in 0..patch[0] {
                                let p = [sx + x, sy + y, sz + z];
                                let inside = (0..3).all(|a| p[a] >= lo[a] && p[a] < lo[a] + dims[a]);
                                dst[k] = if inside {
                                    ch[(p[0] - lo[0]) + dims[0] * ((p[1] - lo[1]) + dims[1] * (p[2] - lo[2]))]
                                } else {
                                    mins[c]
                                };
                                k += 1;
                            }
                        }
                    }
                }
                let x = Tensor::new(vec![1, channels.len(), patch[2], patch[1], patch[0]], buf.clone())
                    .expect("window shape");
                let prob = predictor.predict(&x)?;
                if prob.len() != pn {
                    return Err(EvalError::ConfigMismatch(format!(
                        "predictor returned {} values for {pn}",
                        prob.len()
                    )));
                }
                let mut k = 0;
                for z in 0..patch[2] {
                    for y in 0..patch[1] {
                        let row = (sx) + padded[0] * ((sy + y) + padded[1] * (sz + z));
                        for x in 0..patch[0] {
                            acc[row + x] += prob[k] as f64 * gauss[k];
                            wsum[row + x] += gauss[k];
                            k += 1;
                        }
                    }
                }
                windows += 1;
            }
        }
    }
    let mut prob = Vec::with_capacity(n);
    let mut weight = Vec::with_capacity(n);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let i = (x + lo[0]) + padded[0] * ((y + lo[1]) + padded[1] * (z + lo[2]));
                prob.push((acc[i] / wsum[i]) as f32);
                weight.push(wsum[i]);
            }
        }
    }
    Ok(WindowOutput {
        dims,
        prob,
        weight,
        windows,
    })
}

/// Network input channels: z-scored CT and PET.
pub fn prepare_input(rec: &SubjectRecord) -> Vec<Vec<f32>> {
    vec![zscore(&rec.ct).0.into_data(), zscore(&rec.pet).0.into_data()]
}

/// Whole-volume segmentation of a preprocessed record, thresholded at 0.5
/// and placed back on the record's original (pre-crop) grid.
///
/// `patch` is given as (x, y, z) extents like volume dims.
pub fn sliding_window_predict(
    model: &Model,
    store: &ParamStore<f32>,
    rec: &SubjectRecord,
    patch: [usize; 3],
    overlap: f64,
) -> Result<Volume3D, EvalError> {
    let spec = model.spec();
    if spec.in_channels != 2 || spec.deep_supervision_levels == 0 {
        return Err(EvalError::ConfigMismatch(
            "sliding-window inference needs a two-channel segmenter".into(),
        ));
    }
    model
        .check_input([patch[2], patch[1], patch[0]])
        .map_err(|e| EvalError::ConfigMismatch(format!("patch {patch:?}: {e}")))?;
    let input = prepare_input(rec);
    let out = sliding_window_probs(&input, rec.dims(), patch, overlap, &mut ModelPredictor { model, store })?;
    let mask: Vec<f32> = out.prob.iter().map(|&p| if p > 0.5 { 1.0 } else { 0.0 }).collect();
    let cropped = rec.ct.with_data(VolumeKind::Label, mask)?;
    match rec.crop {
        Some(info) => Ok(uncrop_volume(&cropped, info.offset, info.original_dims)?),
        None => Ok(cropped),
    }
}

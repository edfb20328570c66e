use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::nn::ParamStore;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;
pub const SGD_MOMENTUM: f64 = 0.99;
pub const SGD_WEIGHT_DECAY: f64 = 3e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    SgdNesterov,
}

/// Adam moments, or SGD momentum buffers in `first`.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    /// L2 penalty added to the gradient.
    pub weight_decay: f64,
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, weight_decay: f64, params: &ParamStore<f32>) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors.iter().map(|t| vec![0.0; t.numel()]).collect();
        Self {
            kind,
            weight_decay,
            step: 0,
            second: if kind == OptimizerKind::Adam {
                zeros.clone()
            } else {
                Vec::new()
            },
            first: zeros,
        }
    }
}

/// One in-place update. Moments are kept in f64.
pub fn optimizer_step(
    params: &mut ParamStore<f32>,
    grads: &[Vec<f32>],
    state: &mut OptimizerState,
    lr: f64,
) -> Result<(), TrainError> {
    let n = params.tensors.len();
    let sizes_ok = grads.len() == n
        && state.first.len() == n
        && (state.kind != OptimizerKind::Adam || state.second.len() == n)
        && params.tensors.iter().enumerate().all(|(i, t)| {
            grads[i].len() == t.numel()
                && state.first[i].len() == t.numel()
                && (state.kind != OptimizerKind::Adam || state.second[i].len() == t.numel())
        });
    if !sizes_ok {
        return Err(TrainError::StateMismatch);
    }
    state.step += 1;
    let wd = state.weight_decay;
    match state.kind {
        OptimizerKind::Adam => {
            let t = state.step as i32;
            let bc1 = 1.0 - num_traits::Float::powi(ADAM_BETA1, t);
            let bc2 = 1.0 - num_traits::Float::powi(ADAM_BETA2, t);
            for (i, p) in params.tensors.iter_mut().enumerate() {
                let (m, v) = (&mut state.first[i], &mut state.second[i]);
                for (j, w) in p.data_mut().iter_mut().enumerate() {
                    let g = grads[i][j] as f64 + wd * *w as f64;
                    m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g;
                    v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g * g;
                    let step = (m[j] / bc1) / (num_traits::Float::sqrt(v[j] / bc2) + ADAM_EPSILON);
                    *w = (*w as f64 - lr * step) as f32;
                }
            }
        }
        OptimizerKind::SgdNesterov => {
            for (i, p) in params.tensors.iter_mut().enumerate() {
                let buf = &mut state.first[i];
                for (j, w) in p.data_mut().iter_mut().enumerate() {
                    let g = grads[i][j] as f64 + wd * *w as f64;
                    buf[j] = SGD_MOMENTUM * buf[j] + g;
                    let step = g + SGD_MOMENTUM * buf[j];
                    *w = (*w as f64 - lr * step) as f32;
                }
            }
        }
    }
    Ok(())
}

use alloc::format;
use alloc::vec::Vec;

use super::TrainError;
use crate::tensor::{Graph, Scalar, TensorError, Var};

pub const DICE_EPSILON: f64 = 1e-5;

/// Soft Dice on the foreground channel, pooled over the batch, plus
/// voxel-mean cross-entropy. `target` holds 0/1 per voxel, `[N, D, H, W]`.
pub fn loss_dice_ce<T: Scalar>(g: &mut Graph<T>, logits: Var, target: &[T]) -> Result<Var, TrainError> {
    let shape = g.shape(logits).to_vec();
    let (n, m) = match shape[..] {
        [n, 2, d, h, w] => (n, d * h * w),
        _ => {
            return Err(TensorError::ShapeMismatch {
                op: "loss_dice_ce",
                detail: format!("logits must be [N,2,D,H,W], got {shape:?}"),
            }
            .into())
        }
    };
    if target.len() != n * m {
        return Err(TensorError::ShapeMismatch {
            op: "loss_dice_ce",
            detail: format!("{} targets for {shape:?}", target.len()),
        }
        .into());
    }
    let mut onehot = Vec::with_capacity(2 * n * m);
    for s in 0..n {
        let t = &target[s * m..(s + 1) * m];
        onehot.extend(t.iter().map(|&v| T::one() - v));
        onehot.extend_from_slice(t);
    }
    let lsm = g.log_softmax(logits, 1)?;
    let picked = g.mul_const(lsm, onehot)?;
    let picked = g.sum(picked);
    let ce = g.scale(picked, -1.0 / (n * m) as f64);

    let p = g.softmax(logits, 1)?;
    let fg = g.narrow(p, 1, 1, 1)?;
    let gsum: f64 = target.iter().map(|v| v.as_f64()).sum();
    let inter = g.mul_const(fg, target.to_vec())?;
    let inter = g.sum(inter);
    let psum = g.sum(fg);
    let den = g.add_scalar(psum, gsum + DICE_EPSILON);
    let ratio = g.div(inter, den)?;
    let ratio = g.scale(ratio, -2.0);
    let dice = g.add_scalar(ratio, 1.0);
    Ok(g.add(dice, ce)?)
}

/// Weights `2^-k` for heads `k = 0..n`, normalized to sum 1.
pub fn deep_supervision_weights(n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|k| 1.0 / (1u64 << k) as f64).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| w / total).collect()
}

/// Weighted sum of per-head losses, full resolution first.
pub fn loss_deep_supervision<T: Scalar>(g: &mut Graph<T>, head_losses: &[Var]) -> Result<Var, TrainError> {
    if head_losses.is_empty() {
        return Err(TrainError::EmptyList);
    }
    if head_losses.len() == 1 {
        return Ok(head_losses[0]);
    }
    let w = deep_supervision_weights(head_losses.len());
    let mut total = g.scale(head_losses[0], w[0]);
    for (k, &l) in head_losses.iter().enumerate().skip(1) {
        let s = g.scale(l, w[k]);
        total = g.add(total, s)?;
    }
    Ok(total)
}

/// Mean binary cross-entropy of logits `[N, 1]` against 0/1 targets.
pub fn loss_bce<T: Scalar>(g: &mut Graph<T>, logits: Var, target: &[T]) -> Result<Var, TrainError> {
    Ok(g.bce_with_logits(logits, target)?)
}

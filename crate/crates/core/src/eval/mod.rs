//! Overlap and ranking metrics, sliding-window inference and fold reports.

mod report;
mod window;

pub use report::{report_folds, FoldReport, FoldSummary};
pub use window::{
    gaussian_weights, prepare_input, sliding_window_predict, sliding_window_probs, window_starts, ModelPredictor,
    PatchPredictor, WindowOutput, DEFAULT_OVERLAP,
};

use alloc::string::String;
use alloc::vec::Vec;
use thiserror::Error;

use crate::nn::NnError;
use crate::volume::{Volume3D, VolumeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("fold {0} has no subjects")]
    EmptyFold(usize),
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// `2|A∩B| / (|A| + |B|)` over non-zero voxels; two empty masks score 1.
pub fn dice(pred: &Volume3D, truth: &Volume3D) -> Result<f64, EvalError> {
    pred.same_dims(truth)?;
    Ok(dice_slices(pred.data(), truth.data()))
}

pub(crate) fn dice_slices(pred: &[f32], truth: &[f32]) -> f64 {
    let (mut inter, mut a, mut b) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        let (p, t) = (p != 0.0, t != 0.0);
        a += p as usize;
        b += t as usize;
        inter += (p && t) as usize;
    }
    if a + b == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (a + b) as f64
    }
}

/// Area under the ROC curve as the Mann-Whitney statistic, with average
/// ranks for tied scores. Returns NaN when only one class is present.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&l| l != 0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(f64::NAN);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks are 1-based; the tie group [i, j] shares their average.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] != 0 {
                pos_rank_sum += avg;
            }
        }
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;
use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub mean: f64,
    /// Population standard deviation over the fold's subjects.
    pub std: f64,
    pub subjects: usize,
}

/// Per-fold mean ± std and the mean of fold means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub model_name: String,
    pub per_fold: Vec<FoldSummary>,
    /// Arithmetic mean of the fold means.
    pub overall_mean: f64,
    /// Mean over all subjects pooled across folds.
    pub subject_mean: f64,
}

/// Summarizes per-subject metrics grouped by fold (`per_fold[i]` is fold i).
pub fn report_folds(model_name: &str, per_fold: &[Vec<f64>]) -> Result<FoldReport, EvalError> {
    if per_fold.is_empty() {
        return Err(EvalError::EmptyFold(0));
    }
    let mut folds = Vec::with_capacity(per_fold.len());
    for (i, vals) in per_fold.iter().enumerate() {
        if vals.is_empty() {
            return Err(EvalError::EmptyFold(i));
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        folds.push(FoldSummary {
            fold: i,
            mean,
            std: num_traits::Float::sqrt(var),
            subjects: vals.len(),
        });
    }
    let overall_mean = folds.iter().map(|f| f.mean).sum::<f64>() / folds.len() as f64;
    let total: usize = folds.iter().map(|f| f.subjects).sum();
    let subject_mean = per_fold.iter().flatten().sum::<f64>() / total as f64;
    Ok(FoldReport {
        model_name: model_name.into(),
        per_fold: folds,
        overall_mean,
        subject_mean,
    })
}

impl FoldReport {
    /// Aligned text table: one `μ±σ` cell per fold and a Mean column,
    /// three decimals.
    pub fn to_table(&self) -> String {
        let name_w = self.model_name.len().max(5);
        let cells: Vec<String> = self
            .per_fold
            .iter()
            .map(|f| format!("{:.3}±{:.3}", f.mean, f.std))
            .collect();
        let cell_w = cells.iter().map(|c| c.chars().count()).max().unwrap_or(0).max(5);
        let mut out = String::new();
        let _ = write!(out, "{:<name_w$}", "Model");
        for f in &self.per_fold {
            let _ = write!(out, " | {:<cell_w$}", format!("Fold{}", f.fold));
        }
        let _ = writeln!(out, " | Mean");
        let _ = write!(out, "{:<name_w$}", self.model_name);
        for c in &cells {
            let pad = cell_w - c.chars().count();
            let _ = write!(out, " | {c}{:pad$}", "");
        }
        let _ = writeln!(out, " | {:.3}", self.overall_mean);
        out
    }
}

//! Central finite-difference gradient checking.
//!
//! Uses only forward evaluations, so it is independent of every backward
//! rule it checks.

use alloc::vec::Vec;

use super::{Graph, Tensor, TensorError, Var};

/// Worst-case comparison between analytic and numeric gradients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    /// Largest `|a − n| / max(|a|, |n|, floor)` over all checked entries.
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Relative error with a small floor so that entries where both gradients
/// vanish do not divide by zero.
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Checks `d loss / d inputs` where `build` maps leaf vars to a scalar loss.
///
/// Each perturbation uses `h = h_rel · max(1, |θ|)`.
pub fn check<F>(inputs: &[Tensor<f64>], h_rel: f64, floor: f64, build: F) -> Result<GradCheck, TensorError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |ts: &[Tensor<f64>]| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.param(t.clone())).collect();
        let loss = build(&mut g, &vars)?;
        Ok(g.data(loss)[0])
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (ti, &v) in vars.iter().enumerate() {
        let analytic: Vec<f64> = grads
            .get(v)
            .map(|s| s.to_vec())
            .unwrap_or_else(|| alloc::vec![0.0; inputs[ti].numel()]);
        for j in 0..inputs[ti].numel() {
            let theta = inputs[ti].data()[j];
            let h = h_rel * theta.abs().max(1.0);
            work[ti].data_mut()[j] = theta + h;
            let fp = eval(&work)?;
            work[ti].data_mut()[j] = theta - h;
            let fm = eval(&work)?;
            work[ti].data_mut()[j] = theta;
            let numeric = (fp - fm) / (2.0 * h);
            worst = worst.max(rel_err(analytic[j], numeric, floor));
            checked += 1;
        }
    }
    Ok(GradCheck {
        max_rel_err: worst,
        checked,
    })
}

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{Arch, ModelSpec, NnError};

/// Closed-form shape summary of a spec applied to an input size.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeReport {
    pub arch: Arch,
    pub input_dims: [usize; 3],
    /// Spatial dims at the output of each encoder stage (dense block for
    /// the classifier).
    pub stage_dims: Vec<[usize; 3]>,
    /// Channel count at the output of each stage.
    pub stage_channels: Vec<usize>,
    /// Spatial dims of each segmentation head, full resolution first.
    pub head_dims: Vec<[usize; 3]>,
    pub param_count: usize,
}

fn conv(k: usize, cin: usize, cout: usize, bias: bool) -> usize {
    k * k * k * cin * cout + if bias { cout } else { 0 }
}

fn norm(c: usize) -> usize {
    2 * c
}

fn halve(dims: [usize; 3], times: usize) -> [usize; 3] {
    dims.map(|d| d >> times)
}

/// Computes stage dims and the parameter count from the [`ModelSpec`] alone.
pub fn audit_shapes(spec: &ModelSpec, input_dims: [usize; 3]) -> Result<ShapeReport, NnError> {
    spec.validate()?;
    spec.check_input(input_dims)?;
    let f = spec.scaled_features();
    let (cin, cout) = (spec.in_channels, spec.out_channels);
    let ds = spec.deep_supervision_levels;
    let mut params = 0;
    let mut stage_dims = Vec::new();
    let mut stage_channels = Vec::new();
    let mut head_dims = Vec::new();
    match spec.arch {
        Arch::SegResNet | Arch::ResEncUNet => {
            let res = spec.arch == Arch::ResEncUNet;
            params += conv(3, cin, f[0], false) + if res { norm(f[0]) } else { 0 };
            for i in 0..spec.stages {
                stage_dims.push(halve(input_dims, i));
                stage_channels.push(f[i]);
                let nb = spec.blocks_per_stage[i];
                if res {
                    let first_in = if i == 0 { f[0] } else { f[i - 1] };
                    let projected = i > 0 || first_in != f[i];
                    params += conv(3, first_in, f[i], false) + conv(3, f[i], f[i], false) + 2 * norm(f[i]);
                    if projected {
                        params += conv(1, first_in, f[i], false) + norm(f[i]);
                    }
                    params += (nb - 1) * (2 * conv(3, f[i], f[i], false) + 2 * norm(f[i]));
                } else {
                    if i > 0 {
                        params += conv(3, f[i - 1], f[i], false);
                    }
                    params += nb * (2 * conv(3, f[i], f[i], false) + 2 * norm(f[i]));
                }
            }
            for j in 0..spec.stages - 1 {
                params += if res {
                    conv(1, f[j + 1], f[j], true) + conv(3, 2 * f[j], f[j], false) + norm(f[j])
                } else {
                    conv(1, f[j + 1], f[j], false) + 2 * conv(3, f[j], f[j], false) + 2 * norm(f[j])
                };
            }
            for j in 0..ds {
                head_dims.push(halve(input_dims, j));
                params += conv(1, f[j], cout, true);
            }
        }
        Arch::DenseNetCls => {
            let block_dims = spec.dense_block_dims(input_dims);
            let mut c = 2 * f[0];
            params += conv(3, cin, c, false) + norm(c);
            for i in 0..spec.stages {
                let g = f[i];
                for _ in 0..spec.blocks_per_stage[i] {
                    params += norm(c) + conv(1, c, 4 * g, false) + norm(4 * g) + conv(3, 4 * g, g, false);
                    c += g;
                }
                stage_dims.push(block_dims[i]);
                stage_channels.push(c);
                if i + 1 < spec.stages {
                    params += norm(c) + conv(1, c, c / 2, false);
                    c /= 2;
                }
            }
            params += norm(c) + c * cout + cout;
        }
    }
    Ok(ShapeReport {
        arch: spec.arch,
        input_dims,
        stage_dims,
        stage_channels,
        head_dims,
        param_count: params,
    })
}

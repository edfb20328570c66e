use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::NnError;

/// Width scaling never shrinks a layer below this many channels.
pub const MIN_CHANNELS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    SegResNet,
    ResEncUNet,
    DenseNetCls,
}

/// Declarative architecture description.
///
/// For [`Arch::DenseNetCls`], `blocks_per_stage` holds the layer count of
/// each dense block and `features_per_stage` the growth rate of each block;
/// the stem width is twice the first growth rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Arch,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stages: usize,
    pub blocks_per_stage: Vec<usize>,
    pub features_per_stage: Vec<usize>,
    pub deep_supervision_levels: usize,
    pub dropout_rate: f64,
    pub width_scale: f64,
}

impl ModelSpec {
    /// SegResNet profile: six encoder stages with (1, 3, 4, 4, 6, 6) blocks
    /// and four deep-supervision levels.
    pub fn paper_segresnet() -> Self {
        Self {
            arch: Arch::SegResNet,
            in_channels: 2,
            out_channels: 2,
            stages: 6,
            blocks_per_stage: vec![1, 3, 4, 4, 6, 6],
            features_per_stage: vec![32, 64, 128, 256, 512, 1024],
            deep_supervision_levels: 4,
            dropout_rate: 0.0,
            width_scale: 1.0,
        }
    }

    /// Residual-encoder U-Net profile: (1, 3, 4, 5, 6, 6) blocks and
    /// (32, 64, 128, 256, 320, 320) features.
    pub fn paper_resenc() -> Self {
        Self {
            arch: Arch::ResEncUNet,
            in_channels: 2,
            out_channels: 2,
            stages: 6,
            blocks_per_stage: vec![1, 3, 4, 5, 6, 6],
            features_per_stage: vec![32, 64, 128, 256, 320, 320],
            deep_supervision_levels: 4,
            dropout_rate: 0.0,
            width_scale: 1.0,
        }
    }

    /// DenseNet-121 layout (6, 12, 24, 16) with growth 32 and dropout 0.2.
    pub fn paper_densenet121() -> Self {
        Self {
            arch: Arch::DenseNetCls,
            in_channels: 1,
            out_channels: 1,
            stages: 4,
            blocks_per_stage: vec![6, 12, 24, 16],
            features_per_stage: vec![32, 32, 32, 32],
            deep_supervision_levels: 0,
            dropout_rate: 0.2,
            width_scale: 1.0,
        }
    }

    pub fn desk_segresnet() -> Self {
        Self {
            stages: 3,
            blocks_per_stage: vec![1, 1, 1],
            features_per_stage: vec![32, 64, 128],
            deep_supervision_levels: 2,
            width_scale: 0.125,
            ..Self::paper_segresnet()
        }
    }

    pub fn desk_resenc() -> Self {
        Self {
            stages: 4,
            blocks_per_stage: vec![1, 1, 1, 1],
            features_per_stage: vec![8, 16, 32, 32],
            deep_supervision_levels: 2,
            ..Self::paper_resenc()
        }
    }

    /// Growth 4 after scaling by 1/8.
    pub fn desk_densenet() -> Self {
        Self {
            width_scale: 0.125,
            ..Self::paper_densenet121()
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |msg: alloc::string::String| Err(NnError::SpecMismatch(msg));
        if self.stages == 0 {
            return bad("stages must be positive".into());
        }
        if self.blocks_per_stage.len() != self.stages || self.features_per_stage.len() != self.stages {
            return bad(format!(
                "{} stages but {} block counts and {} feature counts",
                self.stages,
                self.blocks_per_stage.len(),
                self.features_per_stage.len()
            ));
        }
        if self.deep_supervision_levels >= self.stages {
            return bad(format!(
                "deep supervision levels {} must be below stage count {}",
                self.deep_supervision_levels, self.stages
            ));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.features_per_stage.contains(&0) {
            return bad("feature counts must be positive".into());
        }
        if !(self.width_scale > 0.0) || !self.width_scale.is_finite() {
            return bad(format!("width_scale {} must be positive", self.width_scale));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout rate {} outside [0, 1)", self.dropout_rate));
        }
        match self.arch {
            Arch::SegResNet | Arch::ResEncUNet => {
                if self.deep_supervision_levels == 0 {
                    return bad("segmenters need at least one output head".into());
                }
                if self.blocks_per_stage.contains(&0) {
                    return bad("every encoder stage needs at least one block".into());
                }
            }
            Arch::DenseNetCls => {
                if self.deep_supervision_levels != 0 {
                    return bad("classifier has no deep supervision".into());
                }
            }
        }
        Ok(())
    }

    /// Applies `width_scale`, flooring and clamping at [`MIN_CHANNELS`].
    pub fn scale(&self, features: usize) -> usize {
        ((features as f64 * self.width_scale) as usize).max(MIN_CHANNELS)
    }

    pub fn scaled_features(&self) -> Vec<usize> {
        self.features_per_stage.iter().map(|&f| self.scale(f)).collect()
    }

    /// Segmenter input dims must be divisible by this factor. The
    /// classifier pools with floor division and only needs a minimum size.
    pub fn input_divisor(&self) -> usize {
        match self.arch {
            Arch::SegResNet | Arch::ResEncUNet => 1 << (self.stages - 1),
            Arch::DenseNetCls => 1,
        }
    }

    /// Spatial dims after each dense block: the stride-2 stem conv rounds
    /// up, every pooling rounds down.
    pub(crate) fn dense_block_dims(&self, input: [usize; 3]) -> Vec<[usize; 3]> {
        let mut d = input.map(|v| v.div_ceil(2) / 2);
        let mut out = vec![d];
        for _ in 1..self.stages {
            d = d.map(|v| v / 2);
            out.push(d);
        }
        out
    }

    pub fn check_input(&self, dims: [usize; 3]) -> Result<(), NnError> {
        let factor = self.input_divisor();
        if dims.iter().any(|&d| d == 0 || d % factor != 0) {
            return Err(NnError::IndivisibleInput { dims, factor });
        }
        if self.arch == Arch::DenseNetCls && self.dense_block_dims(dims).last().unwrap().contains(&0) {
            return Err(NnError::SpecMismatch(format!(
                "input {dims:?} too small for {} dense blocks",
                self.stages
            )));
        }
        Ok(())
    }
}

use alloc::format;
use alloc::vec::Vec;

use super::backend::{Backend, Tag};
use super::layers::{Conv, Norm, Registry, LEAKY_SLOPE};
use super::{ModelSpec, NnError};

/// Pre-activation residual block: `x + conv(act(norm(conv(act(norm(x))))))`.
struct ResBlock {
    norm1: Norm,
    conv1: Conv,
    norm2: Norm,
    conv2: Conv,
}

impl ResBlock {
    fn build(reg: &mut Registry, name: &str, c: usize) -> Self {
        Self {
            norm1: reg.norm(&format!("{name}.norm1"), c),
            conv1: reg.conv(&format!("{name}.conv1"), c, c, 3, 1, false),
            norm2: reg.norm(&format!("{name}.norm2"), c),
            conv2: reg.conv(&format!("{name}.conv2"), c, c, 3, 1, false),
        }
    }

    fn run<B: Backend>(&self, b: &mut B, x: B::V) -> Result<B::V, NnError> {
        let h = self.norm1.run(b, x)?;
        let h = b.leaky_relu(h, LEAKY_SLOPE);
        let h = self.conv1.run(b, h)?;
        let h = self.norm2.run(b, h)?;
        let h = b.leaky_relu(h, LEAKY_SLOPE);
        let h = self.conv2.run(b, h)?;
        b.add(h, x)
    }
}

struct Stage {
    down: Option<Conv>,
    blocks: Vec<ResBlock>,
}

struct UpLevel {
    reduce: Conv,
    block: ResBlock,
}

pub(crate) struct SegResNet {
    stem: Conv,
    stages: Vec<Stage>,
    /// Index `j` decodes into resolution level `j`.
    up: Vec<UpLevel>,
    heads: Vec<Conv>,
}

impl SegResNet {
    pub fn build(spec: &ModelSpec, reg: &mut Registry) -> Self {
        let f = spec.scaled_features();
        let stem = reg.conv("stem", spec.in_channels, f[0], 3, 1, false);
        let stages = (0..spec.stages)
            .map(|i| Stage {
                down: (i > 0).then(|| reg.conv(&format!("enc{i}.down"), f[i - 1], f[i], 3, 2, false)),
                blocks: (0..spec.blocks_per_stage[i])
                    .map(|k| ResBlock::build(reg, &format!("enc{i}.block{k}"), f[i]))
                    .collect(),
            })
            .collect();
        let up = (0..spec.stages - 1)
            .map(|j| UpLevel {
                reduce: reg.conv(&format!("dec{j}.reduce"), f[j + 1], f[j], 1, 1, false),
                block: ResBlock::build(reg, &format!("dec{j}.block"), f[j]),
            })
            .collect();
        let heads = (0..spec.deep_supervision_levels)
            .map(|j| reg.conv(&format!("head{j}"), f[j], spec.out_channels, 1, 1, true))
            .collect();
        Self {
            stem,
            stages,
            up,
            heads,
        }
    }

    pub fn forward<B: Backend>(&self, b: &mut B, x: B::V) -> Result<Vec<B::V>, NnError> {
        let mut h = self.stem.run(b, x)?;
        let mut skips = Vec::with_capacity(self.stages.len());
        for (i, st) in self.stages.iter().enumerate() {
            if let Some(d) = &st.down {
                h = d.run(b, h)?;
            }
            for blk in &st.blocks {
                h = blk.run(b, h)?;
            }
            b.mark(Tag::Stage(i), h);
            skips.push(h);
        }
        let mut outs = Vec::with_capacity(self.heads.len());
        for j in (0..self.up.len()).rev() {
            let lvl = &self.up[j];
            h = lvl.reduce.run(b, h)?;
            h = b.upsample2(h)?;
            h = b.add(h, skips[j])?;
            h = lvl.block.run(b, h)?;
            b.mark(Tag::Decoder(j), h);
            if let Some(head) = self.heads.get(j) {
                let o = head.run(b, h)?;
                b.mark(Tag::Head(j), o);
                outs.push(o);
            }
        }
        outs.reverse();
        Ok(outs)
    }
}

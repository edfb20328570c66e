use alloc::format;
use alloc::vec::Vec;

use super::backend::{Backend, Tag};
use super::layers::{Conv, Norm, Registry, LEAKY_SLOPE};
use super::{ModelSpec, NnError};

/// Basic residual block with an average-pool projection shortcut when the
/// stride or width changes.
struct BasicBlock {
    conv1: Conv,
    norm1: Norm,
    conv2: Conv,
    norm2: Norm,
    /// Pool stride (1 means no pooling), projection conv and its norm.
    skip: Option<(usize, Conv, Norm)>,
}

impl BasicBlock {
    fn build(reg: &mut Registry, name: &str, cin: usize, cout: usize, stride: usize) -> Self {
        let skip = (stride != 1 || cin != cout).then(|| {
            (
                stride,
                reg.conv(&format!("{name}.skip.conv"), cin, cout, 1, 1, false),
                reg.norm(&format!("{name}.skip.norm"), cout),
            )
        });
        Self {
            conv1: reg.conv(&format!("{name}.conv1"), cin, cout, 3, stride, false),
            norm1: reg.norm(&format!("{name}.norm1"), cout),
            conv2: reg.conv(&format!("{name}.conv2"), cout, cout, 3, 1, false),
            norm2: reg.norm(&format!("{name}.norm2"), cout),
            skip,
        }
    }

    fn run<B: Backend>(&self, b: &mut B, x: B::V) -> Result<B::V, NnError> {
        let h = self.conv1.run(b, x)?;
        let h = self.norm1.run(b, h)?;
        let h = b.leaky_relu(h, LEAKY_SLOPE);
        let h = self.conv2.run(b, h)?;
        let h = self.norm2.run(b, h)?;
        let s = match &self.skip {
            None => x,
            Some((stride, conv, norm)) => {
                let p = if *stride > 1 {
                    b.avg_pool(x, *stride, *stride)?
                } else {
                    x
                };
                let p = conv.run(b, p)?;
                norm.run(b, p)?
            }
        };
        let h = b.add(h, s)?;
        Ok(b.leaky_relu(h, LEAKY_SLOPE))
    }
}

struct UpLevel {
    transp: Conv,
    conv: Conv,
    norm: Norm,
}

pub(crate) struct ResEncUNet {
    stem: (Conv, Norm),
    stages: Vec<Vec<BasicBlock>>,
    up: Vec<UpLevel>,
    heads: Vec<Conv>,
}

impl ResEncUNet {
    pub fn build(spec: &ModelSpec, reg: &mut Registry) -> Self {
        let f = spec.scaled_features();
        let stem = (
            reg.conv("stem.conv", spec.in_channels, f[0], 3, 1, false),
            reg.norm("stem.norm", f[0]),
        );
        let stages = (0..spec.stages)
            .map(|i| {
                (0..spec.blocks_per_stage[i])
                    .map(|k| {
                        let (cin, stride) = match (i, k) {
                            (0, 0) => (f[0], 1),
                            (_, 0) => (f[i - 1], 2),
                            _ => (f[i], 1),
                        };
                        BasicBlock::build(reg, &format!("enc{i}.block{k}"), cin, f[i], stride)
                    })
                    .collect()
            })
            .collect();
        let up = (0..spec.stages - 1)
            .map(|j| UpLevel {
                transp: reg.conv(&format!("dec{j}.transp"), f[j + 1], f[j], 1, 1, true),
                conv: reg.conv(&format!("dec{j}.conv"), 2 * f[j], f[j], 3, 1, false),
                norm: reg.norm(&format!("dec{j}.norm"), f[j]),
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
        let h = self.stem.0.run(b, x)?;
        let h = self.stem.1.run(b, h)?;
        let mut h = b.leaky_relu(h, LEAKY_SLOPE);
        let mut skips = Vec::with_capacity(self.stages.len());
        for (i, blocks) in self.stages.iter().enumerate() {
            for blk in blocks {
                h = blk.run(b, h)?;
            }
            b.mark(Tag::Stage(i), h);
            skips.push(h);
        }
        let mut outs = Vec::with_capacity(self.heads.len());
        for j in (0..self.up.len()).rev() {
            let lvl = &self.up[j];
            h = b.upsample2(h)?;
            h = lvl.transp.run(b, h)?;
            h = b.concat_channels(&[h, skips[j]])?;
            h = lvl.conv.run(b, h)?;
            h = lvl.norm.run(b, h)?;
            h = b.leaky_relu(h, LEAKY_SLOPE);
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

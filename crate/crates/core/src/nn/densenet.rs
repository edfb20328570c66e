use alloc::format;
use alloc::vec::Vec;

use super::backend::{Backend, Tag};
use super::layers::{Conv, Dense, Norm, Registry};
use super::{ModelSpec, NnError};

/// Bottleneck layer producing `growth` new channels.
struct DenseLayer {
    norm1: Norm,
    conv1: Conv,
    norm2: Norm,
    conv2: Conv,
}

struct Transition {
    norm: Norm,
    conv: Conv,
}

pub(crate) struct DenseNet {
    stem: (Conv, Norm),
    blocks: Vec<Vec<DenseLayer>>,
    transitions: Vec<Transition>,
    final_norm: Norm,
    classifier: Dense,
}

/// Bottleneck width as a multiple of the growth rate.
const BOTTLENECK: usize = 4;

impl DenseNet {
    pub fn build(spec: &ModelSpec, reg: &mut Registry) -> Self {
        let growth = spec.scaled_features();
        let mut c = 2 * growth[0];
        let stem = (
            reg.conv("stem.conv", spec.in_channels, c, 3, 2, false),
            reg.norm("stem.norm", c),
        );
        let mut blocks = Vec::new();
        let mut transitions = Vec::new();
        for i in 0..spec.stages {
            let g = growth[i];
            let layers = (0..spec.blocks_per_stage[i])
                .map(|l| {
                    let name = format!("block{i}.layer{l}");
                    let layer = DenseLayer {
                        norm1: reg.norm(&format!("{name}.norm1"), c),
                        conv1: reg.conv(&format!("{name}.conv1"), c, BOTTLENECK * g, 1, 1, false),
                        norm2: reg.norm(&format!("{name}.norm2"), BOTTLENECK * g),
                        conv2: reg.conv(&format!("{name}.conv2"), BOTTLENECK * g, g, 3, 1, false),
                    };
                    c += g;
                    layer
                })
                .collect();
            blocks.push(layers);
            if i + 1 < spec.stages {
                transitions.push(Transition {
                    norm: reg.norm(&format!("trans{i}.norm"), c),
                    conv: reg.conv(&format!("trans{i}.conv"), c, c / 2, 1, 1, false),
                });
                c /= 2;
            }
        }
        Self {
            stem,
            blocks,
            transitions,
            final_norm: reg.norm("final.norm", c),
            classifier: reg.dense("classifier", c, spec.out_channels),
        }
    }

    pub fn forward<B: Backend>(&self, b: &mut B, x: B::V, dropout: f64) -> Result<Vec<B::V>, NnError> {
        let h = self.stem.0.run(b, x)?;
        let h = self.stem.1.run(b, h)?;
        let h = b.relu(h);
        let mut h = b.max_pool(h, 2, 2)?;
        let mut site = 0u64;
        for (i, layers) in self.blocks.iter().enumerate() {
            for l in layers {
                let y = l.norm1.run(b, h)?;
                let y = b.relu(y);
                let y = l.conv1.run(b, y)?;
                let y = l.norm2.run(b, y)?;
                let y = b.relu(y);
                let y = l.conv2.run(b, y)?;
                let y = b.dropout(y, dropout, site)?;
                site += 1;
                h = b.concat_channels(&[h, y])?;
            }
            b.mark(Tag::Stage(i), h);
            if let Some(t) = self.transitions.get(i) {
                h = t.norm.run(b, h)?;
                h = b.relu(h);
                h = t.conv.run(b, h)?;
                h = b.avg_pool(h, 2, 2)?;
            }
        }
        let h = self.final_norm.run(b, h)?;
        let h = b.relu(h);
        let h = b.global_avg_pool(h)?;
        Ok(alloc::vec![self.classifier.run(b, h)?])
    }
}

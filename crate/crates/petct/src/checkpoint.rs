//! Binary checkpoints.
//!
//! Layout: the 8 magic bytes `PCKPT001`, a little-endian `u32` header
//! length, the JSON header, then every tensor as little-endian f32 in the
//! order the header lists them (sorted by parameter name).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use petct_core::nn::{Model, ModelSpec, NnError, ParamStore};
use petct_core::tensor::Tensor;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PCKPT001";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint payload truncated")]
    Truncated,
    #[error("tensor {name}: {detail}")]
    TensorMismatch { name: String, detail: String },
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// What a checkpoint was trained for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Segment,
    Classify,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub spec: ModelSpec,
    pub task: Task,
    /// Training patch (segmenter) or resize target (classifier), x-y-z.
    pub input_size: [usize; 3],
    pub epoch: usize,
    /// `None` when the validation metric was undefined.
    pub metric: Option<f64>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub store: ParamStore<f32>,
}

impl Checkpoint {
    pub fn new(
        model: &Model,
        store: ParamStore<f32>,
        task: Task,
        input_size: [usize; 3],
        epoch: usize,
        metric: f64,
    ) -> Result<Self, CheckpointError> {
        store.check(model)?;
        let mut tensors: Vec<TensorEntry> = model
            .params()
            .iter()
            .map(|p| TensorEntry {
                name: p.name.clone(),
                shape: p.shape.clone(),
            })
            .collect();
        tensors.sort_by(|a, b| a.name.cmp(&b.name));
        Ok(Self {
            header: CheckpointHeader {
                spec: model.spec().clone(),
                task,
                input_size,
                epoch,
                metric: metric.is_finite().then_some(metric),
                tensors,
            },
            store,
        })
    }

    pub fn model(&self) -> Result<Model, CheckpointError> {
        Ok(Model::build(&self.header.spec)?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CheckpointError> {
        let model = self.model()?;
        let index = name_index(&model);
        let json = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(12 + json.len() + 4 * model.param_count());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for e in &self.header.tensors {
            let i = lookup(&index, &e.name)?;
            for v in self.store.tensors[i].data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = bytes.get(12..12 + hlen).ok_or(CheckpointError::Truncated)?;
        let header: CheckpointHeader = serde_json::from_slice(body)?;
        let model = Model::build(&header.spec)?;
        let index = name_index(&model);
        if header.tensors.len() != model.params().len() {
            return Err(CheckpointError::TensorMismatch {
                name: "*".into(),
                detail: format!(
                    "{} tensors stored, model has {}",
                    header.tensors.len(),
                    model.params().len()
                ),
            });
        }
        let mut slots: Vec<Option<Tensor<f32>>> = vec![None; model.params().len()];
        let mut pos = 12 + hlen;
        for e in &header.tensors {
            let i = lookup(&index, &e.name)?;
            let want = &model.params()[i].shape;
            if &e.shape != want || slots[i].is_some() {
                return Err(CheckpointError::TensorMismatch {
                    name: e.name.clone(),
                    detail: format!("stored {:?}, model expects {want:?}", e.shape),
                });
            }
            let n: usize = want.iter().product();
            let raw = bytes.get(pos..pos + 4 * n).ok_or(CheckpointError::Truncated)?;
            pos += 4 * n;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            slots[i] = Some(
                Tensor::new(want.clone(), data).map_err(|e2| CheckpointError::TensorMismatch {
                    name: e.name.clone(),
                    detail: e2.to_string(),
                })?,
            );
        }
        if pos != bytes.len() {
            return Err(CheckpointError::TensorMismatch {
                name: "*".into(),
                detail: format!("{} trailing bytes", bytes.len() - pos),
            });
        }
        let tensors = slots.into_iter().map(|t| t.expect("every slot filled")).collect();
        Ok(Self {
            header,
            store: ParamStore { tensors },
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let bytes = self.to_bytes()?;
        let io = |source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut f = fs::File::create(path).map_err(io)?;
        f.write_all(&bytes).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

fn name_index(model: &Model) -> std::collections::HashMap<&str, usize> {
    model
        .params()
        .iter()
        .enumerate()
        .map(|(i, p)| (p.name.as_str(), i))
        .collect()
}

fn lookup(index: &std::collections::HashMap<&str, usize>, name: &str) -> Result<usize, CheckpointError> {
    index.get(name).copied().ok_or_else(|| CheckpointError::TensorMismatch {
        name: name.into(),
        detail: "not a parameter of the model".into(),
    })
}

//! Declarative construction of the segmentation and classification networks.
//!
//! A [`ModelSpec`] describes an architecture; [`Model::build`] turns it into
//! a list of named parameter shapes plus a layer tree. The forward pass is
//! written once against the [`Backend`] trait and runs either on a
//! [`Graph`](crate::tensor::Graph) (training, inference) or on a
//! [`ShapeTracer`] that only propagates shapes, which is how full-size
//! models are checked without allocating their weights.

mod audit;
mod backend;
mod densenet;
mod layers;
mod resenc;
mod segresnet;
mod spec;

pub use audit::{audit_shapes, ShapeReport};
pub use backend::{Backend, GraphBackend, ShapeTracer, Tag};
pub use layers::{Init, ParamId, ParamSpec};
pub use spec::{Arch, ModelSpec, MIN_CHANNELS};

use alloc::string::String;
use alloc::vec::Vec;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::rng;
use crate::tensor::{Scalar, Tensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("input dims {dims:?} not divisible by {factor}")]
    IndivisibleInput { dims: [usize; 3], factor: usize },
    #[error("spec mismatch: {0}")]
    SpecMismatch(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub(crate) enum Net {
    SegResNet(segresnet::SegResNet),
    ResEnc(resenc::ResEncUNet),
    DenseNet(densenet::DenseNet),
}

/// A built architecture: parameter shapes and the layer tree. Weights live
/// separately in a [`ParamStore`].
pub struct Model {
    spec: ModelSpec,
    params: Vec<ParamSpec>,
    net: Net,
}

impl Model {
    pub fn build(spec: &ModelSpec) -> Result<Self, NnError> {
        spec.validate()?;
        let mut reg = layers::Registry::default();
        let net = match spec.arch {
            Arch::SegResNet => Net::SegResNet(segresnet::SegResNet::build(spec, &mut reg)),
            Arch::ResEncUNet => Net::ResEnc(resenc::ResEncUNet::build(spec, &mut reg)),
            Arch::DenseNetCls => Net::DenseNet(densenet::DenseNet::build(spec, &mut reg)),
        };
        Ok(Self {
            spec: spec.clone(),
            params: reg.params,
            net,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.numel()).sum()
    }

    /// Spatial factor the input dims must be divisible by.
    pub fn input_divisor(&self) -> usize {
        self.spec.input_divisor()
    }

    pub fn check_input(&self, dims: [usize; 3]) -> Result<(), NnError> {
        self.spec.check_input(dims)
    }

    /// Runs the network on `x: [N, in_channels, D, H, W]`.
    ///
    /// Segmenters return one logit map per deep-supervision head, full
    /// resolution first. The classifier returns a single `[N, 1]` logit.
    pub fn forward<B: Backend>(&self, b: &mut B, x: B::V) -> Result<Vec<B::V>, NnError> {
        let dims = b.dims(x);
        if dims.len() != 5 || dims[1] != self.spec.in_channels {
            return Err(NnError::SpecMismatch(alloc::format!(
                "input shape {dims:?}, model expects {} channels",
                self.spec.in_channels
            )));
        }
        self.check_input([dims[2], dims[3], dims[4]])?;
        match &self.net {
            Net::SegResNet(n) => n.forward(b, x),
            Net::ResEnc(n) => n.forward(b, x),
            Net::DenseNet(n) => n.forward(b, x, self.spec.dropout_rate),
        }
    }

    /// Shape-only forward pass.
    pub fn trace(&self, batch: usize, dims: [usize; 3]) -> Result<(Vec<Vec<usize>>, ShapeTracer<'_>), NnError> {
        let mut t = ShapeTracer::new(&self.params);
        let x = t.input(&[batch, self.spec.in_channels, dims[0], dims[1], dims[2]]);
        let heads = self.forward(&mut t, x)?;
        let shapes = heads.iter().map(|&h| t.dims(h)).collect();
        Ok((shapes, t))
    }
}

/// Weights of a [`Model`], index-aligned with [`Model::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    /// Deterministic initialization; parameter `i` draws from its own
    /// stream keyed by `(seed, i)`.
    pub fn init(model: &Model, seed: u64) -> Self {
        let tensors = model
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let n = p.numel();
                let data: Vec<T> = match p.init {
                    Init::Zeros => alloc::vec![T::zero(); n],
                    Init::Ones => alloc::vec![T::one(); n],
                    Init::Normal { std } => {
                        let mut r = rng::stream(&[seed, 0x1A17, i as u64]);
                        (0..n)
                            .map(|_| {
                                let z: f64 = StandardNormal.sample(&mut r);
                                T::of(z * std)
                            })
                            .collect()
                    }
                };
                Tensor::new(p.shape.clone(), data).expect("param shape")
            })
            .collect();
        Self { tensors }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Checks that the store matches the model's parameter list.
    pub fn check(&self, model: &Model) -> Result<(), NnError> {
        if self.tensors.len() != model.params.len()
            || self
                .tensors
                .iter()
                .zip(&model.params)
                .any(|(t, p)| t.shape() != &p.shape[..])
        {
            return Err(NnError::SpecMismatch("parameter store does not match model".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;

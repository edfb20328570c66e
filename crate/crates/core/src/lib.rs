//! Numerical core of a whole-body PET-CT lesion segmentation pipeline.
//!
//! Everything in this crate is pure computation over in-memory data and
//! builds under `#![no_std]` with `alloc`. File formats, the command line
//! and wall-clock timing live in the companion `petct` crate.
//!
//! Module map:
//!
//! - [`volume`]: 3D scalar grids ([`volume::Volume3D`]) and subject records.
//! - [`preprocess`]: body cropping via thresholding and connected components,
//!   CT clipping, z-score normalization and trilinear resizing.
//! - [`tensor`]: a reverse-mode automatic differentiation engine.
//! - [`nn`]: SegResNet, residual-encoder U-Net and 3D DenseNet classifier
//!   built from a declarative [`nn::ModelSpec`].
//! - [`train`]: losses, optimizers, schedules, folds, patch sampling and the
//!   training loops.
//! - [`eval`]: Dice, ROC-AUC, sliding-window inference and fold reports.
//! - [`phantom`]: deterministic synthetic PET-CT subjects.
#![no_std]

extern crate alloc;

pub mod eval;
pub mod nn;
pub mod phantom;
pub mod preprocess;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod volume;

pub use volume::{SubjectRecord, Tracer, Volume3D, VolumeKind};

//! File formats, checkpoints and the command-line pipeline around
//! [`petct_core`].
//!
//! - [`nifti`]: NIfTI-1 volumes.
//! - [`checkpoint`]: model weights with their spec.
//! - [`cohort`]: cohort folders, manifests and crop sidecars.
//! - [`render`]: PPM overlay images.
//! - [`config`]: the JSON pipeline configuration.
//! - [`pipeline`]: one function per subcommand.

pub mod checkpoint;
pub mod cohort;
pub mod config;
pub mod nifti;
pub mod pipeline;
pub mod render;

pub use petct_core as core;

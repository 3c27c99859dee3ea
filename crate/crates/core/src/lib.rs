//! Two-frame geometric vision on a self-contained tensor stack.
//!
//! The crate implements a pair-wise geometry estimator: a spatiotemporal
//! vision-transformer encoder adapted from video-pretrained checkpoints,
//! decoded either by a single linear head or by an iterative warp-and-refine
//! ConvGRU loop, applied to optical flow, stereo disparity and two-view
//! depth. Everything runs on the CPU tensor/autodiff core in [`tensor`] and
//! [`autodiff`]; no external ML runtime is involved.

pub mod autodiff;
pub mod error;
pub mod geometry;
pub mod io;
pub mod loss;
pub mod metrics;
mod ops;
pub mod optim;
pub mod refine;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod vit;

pub use autodiff::{backward, finite_diff_check, no_grad, FiniteDiffReport};
pub use ops::PadMode;
pub use tensor::{Dtype, Element, Tensor};

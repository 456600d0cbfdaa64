//! Light-field densification toolkit.
//!
//! The crate turns a sparsely sampled light field into a densely sampled one
//! by reconstructing its epipolar plane images (EPIs) with a small
//! fully-convolutional network. The pieces:
//!
//! - [`lightfield`] — the 4D light-field container, EPI slicing, color
//!   conversion, and a synthetic scene generator with exact ground-truth
//!   disparities.
//! - [`pyramid`] — the multi-scale EPI decomposition the network consumes:
//!   a low spatial scale level plus residual/blurred-residual pairs, with an
//!   exact inverse for verification.
//! - [`spectrum`] — Fourier-domain aliasing analysis: locates the first
//!   spectral replica of an undersampled EPI and derives the Gaussian
//!   pre-filter shape parameter and kernel size per downsampling scale.
//! - [`net`] — the reconstruction network: conv / transposed-conv / PReLU
//!   primitives, the fixed forward graph, exact reverse-mode gradients, and
//!   an Adam optimizer with per-layer-kind learning rates.
//! - [`train`] — patch extraction, initialization, the two-stage
//!   pretrain/finetune loop, and checkpointing.
//! - [`reconstruct`] — per-EPI inference, 3D light-field densification, and
//!   the hierarchical two-pass 4D strategy.
//! - [`metrics`] — PSNR / SSIM and per-view evaluation reports.
//!
//! Everything computes in `f64` on values in `[0, 1]`; 8-bit quantization
//! happens only at PNG boundaries. Data-parallel loops go through
//! [`par::Pool`], which uses rayon when the `parallel` feature (default) is
//! enabled and falls back to sequential execution otherwise.

pub mod error;
pub mod io;
pub mod lightfield;
pub mod metrics;
pub mod net;
pub mod par;
pub mod pyramid;
pub mod reconstruct;
pub mod scene;
pub mod spectrum;
pub mod train;

pub use error::{Error, Result};
pub use lightfield::{Colorspace, Epi, EpiAxis, LightField4D};
pub use pyramid::{LapEpiPyramid, PyramidConfig};

//! Single-shot fringe-to-height reconstruction.
//!
//! The crate bundles everything needed to train and verify a U-shaped
//! high-resolution network that maps one fringe image to a height map:
//!
//! - [`fpp`]: synthetic scenes, a cosine fringe forward model and a
//!   phase-shifting oracle that recovers height from multi-shot patterns.
//! - [`dataset`]: PNG/PFM sample storage, JSON manifests, splitting and
//!   ingestion of external datasets.
//! - [`network`]: the encoder/decoder backbone with multi-level dilated
//!   blocks and high-resolution fusion blocks, plus ablation variants A-D.
//! - [`losses`]: chunked L2 with rank-ordered patch weights, SSIM and the
//!   compound fusion loss.
//! - [`metrics`]: masked RMSE, SSIM-as-metric, evaluation reports and plots.
//! - [`trainer`]: Adam training loop, history and checkpoints.

pub mod dataset;
pub mod error;
pub mod fpp;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod trainer;

pub use error::{Error, Result};

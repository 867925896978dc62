//! Class-balanced semi-supervised training for multimodal sensing with
//! missing-modality recovery.
//!
//! The crate is `no_std` and only needs `alloc`. It contains:
//!
//! - [`numeric`]: dense matrices, a seeded random stream, softmax, KL
//!   divergence and a truncated SVD used for principal components.
//! - [`datagen`]: a synthetic multimodal generator with class imbalance,
//!   label scarcity and uniform or rotation-periodic modality dropout, plus
//!   the weak/strong augmentation pair.
//! - [`autodiff`]: a small reverse-mode tape over the handful of operations
//!   the losses compose.
//! - [`model`]: per-modality encoders, the fused classifier, the modality
//!   mapping matrices and Adam.
//! - [`ssl`]: adaptive per-class pseudo-label thresholds and the
//!   classification, pseudo-label and contrastive losses.
//! - [`reconstruct`]: principal subspaces of labeled features, cross-modality
//!   recovery and the reconstruction loss.
//! - [`trainer`]: the joint training loop and evaluation.
//!
//! File formats, the CLI and plotting live in the `mmssl` crate.

#![no_std]

extern crate alloc;

pub mod autodiff;
pub mod datagen;
mod error;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod reconstruct;
pub mod ssl;
pub mod trainer;

pub use error::{Error, Result};

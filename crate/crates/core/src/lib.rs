//! Noise-robust density-based anomaly detection.
//!
//! The crate is `no_std` (with `alloc`) and contains every numerical piece of
//! the pipeline:
//!
//! - [`ndgrad`]: dense tensors with a dynamic reverse-mode autodiff graph.
//! - [`flow`]: affine-coupling normalizing flow with exact log-likelihood.
//! - [`scoring`]: transform-averaged anomaly scores, IQR thresholds and
//!   training-pool refinement.
//! - [`robust`]: loss-covariance uncertainty and adaptive L2 regularization.
//! - [`meta`]: first-order bi-level (MAML-style) optimization.
//! - [`bayesopt`]: Gaussian-process surrogate with Expected Improvement.
//! - [`data`] and [`metrics`]: feature sets, label noise, synthetic data,
//!   I-AUROC and precision/recall/F1.
//! - [`pipeline`]: the end-to-end training and evaluation of one
//!   configuration, as driven by the experiment runner.
//!
//! File formats, the experiment grid and the command-line tool live in the
//! companion `rad` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod bayesopt;
pub mod data;
mod error;
pub mod flow;
pub mod math;
pub mod meta;
pub mod metrics;
pub mod ndgrad;
pub mod pipeline;
pub mod rng;
pub mod robust;
pub mod scoring;

pub use error::{Error, Result};

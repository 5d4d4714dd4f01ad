//! CFWGAN-GP: a conditional Wasserstein-GAN-with-gradient-penalty
//! recommender over binary implicit feedback, together with a vanilla-GAN
//! variant, a multi-label-classification baseline, an item-popularity
//! baseline, and a top-k ranking evaluation harness.
//!
//! The crate is organized bottom-up:
//!
//! - [`autodiff`]: tensors, the computation graph, reverse-mode gradients
//!   (with differentiable input gradients for the penalty term), and the
//!   finite-difference oracle.
//! - [`dataio`]: MovieLens parsing, binarization, and per-user splits.
//! - [`models`]: MLP specifications, initialization, and forward passes.
//! - [`training`]: adversarial losses, masks, Adam, and the training loop.
//! - [`baselines`]: the multi-label classifier and item popularity.
//! - [`evaluation`]: top-k ranking and P@k / R@k / N@k.
//! - [`experiment`]: run configuration, orchestration, checkpoints, CSV
//!   reports.

pub mod autodiff;
pub mod baselines;
pub mod dataio;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod models;
pub mod rng;
pub mod training;

pub use error::{Error, Result};

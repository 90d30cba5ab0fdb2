//! lmbreak — a desk-scale toolkit for attacking heat-map facial landmark
//! extractors with L∞-bounded adversarial perturbations and measuring what
//! the damage does downstream.
//!
//! The pipeline has five stages, each its own module:
//!
//! * [`faces`] renders procedural faces with exact landmark ground truth and
//!   turns landmarks into Gaussian heat-map training targets.
//! * [`extractor`] defines three miniature heat-map landmark networks
//!   (forward pass, peak decoding, analytic input gradients) and trains them.
//! * [`attack`] implements the heat-map cosine loss and the sign-gradient
//!   attack family (momentum iterative, single-step and iterative baselines,
//!   plus resize-diversity and update-mixing transfer variants).
//! * [`metrics`] / [`degrade`] implement NME, SSIM, mask-SSIM, region of
//!   interest selection, and the JPEG / video compression channels used in
//!   robustness runs.
//! * [`align`] and [`synth`] form the synthesis proxy: similarity alignment
//!   to a canonical template plus a small reconstruction autoencoder whose
//!   output quality drops when alignment runs on disrupted landmarks.
//!
//! [`harness`] ties everything into a config-driven experiment runner with
//! CSV/JSON/SVG reporting; the `lmbreak` binary exposes it as a CLI.

pub mod align;
pub mod attack;
pub mod degrade;
pub mod error;
pub mod extractor;
pub mod faces;
pub mod harness;
pub mod landmarks;
pub mod metrics;
pub mod nn;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{ImageTensor, Tensor};

//! Function-preserving width expansion ("cloning") of decoder-only
//! transformers.
//!
//! A small pretrained source network is expanded into a wider destination
//! network whose hidden states are n-fold stacked copies of the source's and
//! whose logits match the source exactly at initialization. The crate
//! also ships the diagnostics used to study such clones (row symmetry
//! cosine, singular-value spectra) and a small CPU training loop to watch
//! those diagnostics evolve.
//!
//! Module map:
//! - [`tensor`]: dense matrices, deterministic kernels, Jacobi SVD, seeded RNG.
//! - [`model`]: configs, presets, parameters and the forward pass.
//! - [`cloning`]: clone maps, expansion strategies, `expand_model`.
//! - [`verify`]: function-preservation reports.
//! - [`analysis`]: symmetry cosine and spectrum tracking.
//! - [`train`]: corpus, gradients, AdamW, schedule and the training loop.
//! - [`checkpoint`]: the `HCLN1` binary format.
//! - [`sweep`]: ablation sweeps over bases and strategies.

// `!(x <= tol)` is used on purpose: it also rejects NaN. Kernels index
// several parallel arrays by one loop variable.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod checkpoint;
pub mod cloning;
mod error;
pub mod model;
pub mod sweep;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};

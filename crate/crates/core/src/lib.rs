//! Multi-gate mixture-of-experts estimation of multiple simultaneous
//! treatment effects.
//!
//! The crate is a small laboratory around one estimator:
//!
//! - [`engine`]: dense tensors, a define-by-run reverse-mode tape, losses,
//!   SGD/Adam and a finite-difference gradient checker.
//! - [`stats`]: seeded sampling, PCA, k-means and descriptive statistics.
//! - [`datagen`]: the GWAS and Copula benchmark generators, a single-treatment
//!   CSV loader and per-treatment dataset views.
//! - [`model`]: the network itself (autoencoder, experts, per-treatment gates
//!   and heads, linear outcome layer) and its composite loss.
//! - [`baseline`]: ordinary least squares covariate adjustment.
//! - [`harness`]: training, MAE, replication sweeps and aggregation.
//! - [`cli`]: the config schema and command dispatch behind the `m3e2`
//!   binary.

pub mod baseline;
pub mod cli;
pub mod datagen;
pub mod engine;
mod error;
pub mod harness;
pub mod model;
pub mod stats;

pub use error::{Error, Result};

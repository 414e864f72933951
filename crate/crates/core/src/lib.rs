//! Layer-wise representation analysis for small feed-forward classifiers.
//!
//! `tunnelscope` trains deep rectifier MLPs on synthetic (or CSV) classification
//! tasks and measures how their hidden representations evolve with depth:
//!
//! - [`probes`]: linear probes trained on frozen activations of every layer.
//! - [`linalg`]: covariance spectra and numerical rank.
//! - [`metrics`]: unbiased HSIC, minibatch CKA, inter/intra-class variance, L1 drift.
//! - [`tunnel`]: locating the layer where probe accuracy saturates (the start of the
//!   "tunnel") and the experiments built around it: out-of-distribution probing,
//!   capacity sweeps, extractor/tunnel stitching, training dynamics and
//!   shorter-network forgetting.
//!
//! Data-parallel loops (per-layer probes, CKA entries, sweep cells) go through
//! [`par`], which uses rayon when the `parallel` feature is on (the default) and
//! falls back to plain iterators otherwise. Every parallel map merges results by
//! index, so outputs do not depend on the thread count.

pub mod config;
pub mod data;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod probes;
pub mod runner;
pub mod seed;
pub mod tunnel;

pub use error::{Error, Result};
pub use linalg::{Matrix, SpectrumPolicy};

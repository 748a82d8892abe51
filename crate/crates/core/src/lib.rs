//! Temporal pyramid networks on toy video backbones.
//!
//! The crate bundles everything needed to study feature-level temporal
//! pyramids at desk scale on a CPU: inflated 3D / segment-based 2D residual
//! backbones, the pyramid module itself (spatial and temporal modulation,
//! five information flows, auxiliary supervision), a synthetic
//! tempo-controlled video generator, an SGD training harness with a
//! finite-difference gradient checker, and the tempo-analysis toolkit
//! (FWHM tempo measurement, per-class variance, gain-vs-variance fits,
//! stride-robustness sweeps).
//!
//! All numerics run in `f64` on a small reverse-mode tape ([`graph`]);
//! checkpoints are stored as little-endian `f32` blobs with a JSON manifest.

pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod graph;
pub mod model;
pub mod nn;
pub mod rng;
pub mod tempo;
pub mod tensor;
pub mod tpn;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;

//! Training-dynamics laboratory for a small dense autoencoder.
//!
//! The crate generates synthetic 2D contour datasets, trains a fixed
//! 2→64→32→1→32→64→2 ReLU autoencoder with full-batch Adam, records every
//! parameter, gradient and probe activation at each captured epoch into a
//! framed binary run file, and measures how much each neuron fluctuates over
//! training.
//!
//! Module map:
//!
//! - [`shapegen`]: seeded parametric contour datasets (polygons, circle, spiral).
//! - [`netcore`]: the autoencoder, forward/backward passes and MSE.
//! - [`trainer`]: Adam and the epoch loop with capture hooks.
//! - [`runstore`]: the `NFL1` run-file format.
//! - [`analysis`]: per-neuron spreads, spread of the spread, inactive neurons.
//! - [`report`]: reconstruction results, SVG figures and tables.
//! - [`experiment`]: orchestration of multi-shape, multi-rate plans.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod experiment;
pub mod json;
pub mod netcore;
pub mod report;
pub mod rng;
pub mod runstore;
pub mod shapegen;
pub mod trainer;

pub use error::{Error, Result};
pub use netcore::{ArchitectureSpec, NetworkState, Point};
pub use runstore::{Channel, EpochSnapshot, RunManifest};
pub use shapegen::{ShapeDataset, ShapeKind};
pub use trainer::{AdamParams, RunConfig};

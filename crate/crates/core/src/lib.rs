//! Domain-adversarial transfer learning for fault root-cause classification
//! on tabular telemetry.
//!
//! A shared feature extractor feeds a label classifier and a domain
//! discriminator. Training minimizes source cross-entropy plus a weighted
//! linear-kernel MMD between domain feature means and an adversarial domain
//! loss applied through gradient reversal, and adds confident target
//! predictions back as pseudo-labels.
//!
//! The math is generic over [`Scalar`] (`f32` or `f64`); the `*64` aliases
//! below fix it to `f64`, which is what the trainer and harness use.

pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod objectives;
pub mod persistence;
pub mod scalar;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix64 = numeric::Matrix<f64>;
pub type Matrix32 = numeric::Matrix<f32>;
pub type ModelParams64 = model::ModelParams<f64>;
pub type ModelParams32 = model::ModelParams<f32>;
pub type ModelGrads64 = model::ModelGrads<f64>;
pub type Checkpoint64 = persistence::Checkpoint<f64>;

//! Simulation and optimization toolkit for learnable electromagnetic sensing
//! with a 1-bit programmable metasurface.
//!
//! The crate is organized around the sensing chain:
//!
//! - [`physics`]: analytic Born-approximation forward model (Tx → metasurface →
//!   scene → Rx) used as the ground-truth oracle.
//! - [`nn`]: dense feed-forward networks, reverse-mode gradients, Adam and task losses.
//! - [`surrogate`]: the three-port measurement network (a row-wise hypernetwork
//!   producing the measurement weights of a coding pattern).
//! - [`coding`]: random and PCA baseline coding patterns and the r-SPSA binary optimizer.
//! - [`objective`]: the variational objective and the two-stage / alternating training loops.
//! - [`scenes`]: synthetic gesture scenes, dataset splits, SSIM and classification metrics.
//! - [`experiment`]: configuration, persistence, experiment runner and M-sweeps.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coding;
pub mod error;
pub mod experiment;
pub mod nn;
pub mod objective;
pub mod pattern;
pub mod physics;
pub mod rng;
pub mod scenes;
pub mod surrogate;

pub use error::{Error, Result};
pub use pattern::{CodingPattern, PatternOrigin};
pub use physics::{MeasurementVector, SceneGrid, SensingGeometry};

//! Volume-sorted prediction sets for multi-target regression.
//!
//! A conditional masked autoregressive flow learns the density of the
//! responses given the features; prediction regions are unions of balls
//! around the flow's highest-density samples, with the shared radius
//! calibrated by split conformal prediction so the finite-sample marginal
//! coverage guarantee holds regardless of how well the flow fits. A
//! conformalized per-dimension quantile-regression baseline produces the
//! axis-aligned boxes the method is benchmarked against.
//!
//! Module map:
//! - [`nn`]: masked affine layers, Adam, early-stopping training loop.
//! - [`flow`]: conditional MADE blocks stacked into an invertible flow.
//! - [`vsps`]: volume-sorted sampling, conformal calibration, K selection,
//!   ball-union regions.
//! - [`baseline`]: quantile-regression boxes with joint conformalization.
//! - [`data`]: synthetic generator, CSV ingestion, splits, standardization.
//! - [`metrics`]: coverage, grid-based size, multi-seed aggregation.

// Numeric kernels index several row buffers by position; zipped iterators
// obscure the shape contracts there.
#![allow(clippy::needless_range_loop)]

pub mod baseline;
pub mod data;
pub mod error;
pub mod flow;
pub mod matrix;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod vsps;

pub use error::{Error, Result};
pub use matrix::Matrix;

//! Directed spatial-temporal Granger causality (STGC) graphs for road-network
//! traffic forecasting.
//!
//! The pipeline turns sensor speed series plus a road distance table into a
//! directed graph whose edges point from cause sensor to effect sensor:
//!
//! 1. [`lag`] computes all-pairs shortest road costs and converts them into
//!    travel times measured in whole sampling steps, using the average speed
//!    at the source sensor.
//! 2. [`align`] shifts each cause series by that lag so both series carry the
//!    same traffic information at the same index.
//! 3. [`granger`] fits the restricted and unrestricted autoregressions by
//!    least squares and applies a nested F-test.
//! 4. [`graph`] keeps the significant pairs as directed edges and also builds
//!    the comparison graphs (Gaussian distance kernel, identity, and
//!    degree-matched random).
//!
//! [`predictor`] is a small graph-gated recurrent forecaster trained
//! identically on any input graph, and [`eval`] scores its forecasts per
//! horizon so graphs can be compared. [`synth`] generates road networks with
//! planted causal structure and known delays. [`pipeline::discover`] chains
//! the first four steps.

// `!(x > 0.0)` style checks are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod align;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod granger;
pub mod graph;
pub mod lag;
pub mod pipeline;
pub mod predictor;
pub mod synth;

pub use error::{Error, Result};

/// Crate version embedded into every written artifact.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

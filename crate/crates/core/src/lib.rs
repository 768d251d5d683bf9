//! Multistage spatial context scheduling for latent-grid entropy coding.
//!
//! A latent grid is tiled into n×n patches and decoded in stages: each stage
//! decodes one within-patch cell across every patch in parallel, so a full
//! decode takes n² stages regardless of grid size. Which cells are visible as
//! context at each stage depends entirely on the decoding order, and some
//! orders are measurably better than others.
//!
//! This crate provides the machinery to study and exploit that:
//!
//! - [`grid`]: patch orders, stage maps, latent dimensions, padding rules.
//! - [`mask`]: 5×5 context-availability masks per stage, with a brute-force
//!   oracle and border clipping.
//! - [`field`]: a stationary Gaussian field model giving exact conditional
//!   variances, predictor weights, and discretized-Gaussian rates for any
//!   mask, plus exact sampling of synthetic latent grids.
//! - [`search`]: best/worst decoding-order search — exhaustive, subset
//!   dynamic programming, and branch-and-bound over the additive stage-cost
//!   structure.
//! - [`codec`]: a working range-coded entropy codec for quantized latent
//!   grids under any supported context model, used to measure real bitrates.
//! - [`sim`]: a wavefront parallelism simulator with a two-parameter latency
//!   model.
//!
//! With the `parallel` feature (default) the data-parallel inner loops run on
//! rayon; without it everything runs sequentially with identical results.

pub mod codec;
pub mod error;
pub mod field;
pub mod grid;
pub mod mask;
pub mod parallel;
pub mod range;
pub mod search;
pub mod sim;

pub use error::Error;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;

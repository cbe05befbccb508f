//! Learning and certifying minimal-entropy measurements of chaotic maps.
//!
//! The crate has three layers:
//!
//! - [`maps`]: the chaotic maps themselves (logistic, Hénon, Ikeda) with
//!   trajectory generation and Lyapunov-based metric-entropy oracles.
//! - [`partitions`] + [`entropy`]: deterministic state→symbol measurement
//!   functions, and compression-based entropy-rate estimators (context tree
//!   weighting, LZ cross parsing, bias-corrected block entropy) with a
//!   finite-size scaling fit that extrapolates to infinite sequence length.
//! - [`nn`] + [`dib`]: a small dense-network stack and the distributed
//!   information-bottleneck trainer that learns binary partitions whose
//!   entropy rate approaches the metric entropy.
//!
//! Everything is deterministic given a seed. Data-parallel inner loops
//! (estimator repeats, training trials, batch chunks) run on rayon when the
//! `parallel` feature is enabled (default) and fall back to sequential
//! execution otherwise; both modes produce bit-identical results because all
//! reductions happen in a fixed order.

pub mod artifacts;
pub mod dib;
pub mod entropy;
mod error;
pub mod exec;
pub mod maps;
pub mod nn;
pub mod partitions;
pub mod rng;

pub use error::{Error, Result};

/// Crate version string embedded in CSV headers and file containers.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

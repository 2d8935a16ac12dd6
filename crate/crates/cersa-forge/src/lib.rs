//! Cumulative energy-retaining subspace adaptation (CERSA) on a desk scale.
//!
//! The crate decomposes weight matrices with a self-contained SVD, selects
//! per-layer ranks from cumulative spectral energy, factorizes weights into
//! trainable/frozen/discarded regions, trains the resulting adapters against
//! baseline parameterizations on synthetic tasks, and reports closed-form
//! memory footprints and subspace similarities. Everything is deterministic:
//! a seed plus a config pins every output byte.
//!
//! Start with the runnable programs under `examples/`, or the `cersa-forge`
//! binary for the file-driven workflow.

pub mod adapter;
pub mod analysis;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod factor;
pub mod matrix;
pub mod memory;
pub mod report;
pub mod spectrum;
pub mod svd;
pub mod task;
pub mod train;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use svd::{grassmann, svd, SvdFactors};

//! Multi-level Monte Carlo (MLMC) training of neural operators.
//!
//! The crate is organised bottom-up:
//!
//! * [`multires`] – nested uniform grids, fields and injection restriction.
//! * [`datagen`] – Darcy-flow and synthetic 1D datasets stored at every level.
//! * [`model`] – a small resolution-flexible spectral neural operator with
//!   hand-written reverse-mode gradients.
//! * [`mlmc`] – sample/batch allocation and the telescopic loss/gradient
//!   estimator.
//! * [`batcher`] – per-epoch batch plans (random or nested sub-sampling).
//! * [`optim`] – SGD/Adam and the training loop.
//! * [`diagnostics`] – gradient comparisons, variance decay, audits.
//! * [`sweep`] – baseline-vs-MLMC Pareto sweeps.
//!
//! Batch evaluation and dataset generation are data-parallel when the
//! `parallel` feature (on by default) is enabled; see [`Execution`].

pub mod batcher;
pub mod datagen;
pub mod diagnostics;
pub mod mlmc;
pub mod model;
pub mod multires;
pub mod optim;
mod par;
pub mod sweep;

pub use batcher::{plan_epoch, pool_assignment, prefetch_layout, Batch, BatchPlan};
pub use datagen::{MultiResDataset, Provenance};
pub use mlmc::{allocate_samples, batch_sizes, LevelSchedule, MlmcLossReport};
pub use model::{GradVector, ModelConfig, ModelParams};
pub use multires::{build_hierarchy, GridField, ResolutionLevel};
pub use par::Execution;

use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid hierarchy: {0}")]
    InvalidHierarchy(String),

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("resolution mismatch: {0}")]
    ResolutionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("solver did not converge after {iterations} iterations (residual ratio {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("index {index} out of range for level {level} with {len} samples")]
    IndexOutOfRange { level: usize, index: usize, len: usize },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("checksum mismatch in {path}")]
    Checksum { path: PathBuf },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

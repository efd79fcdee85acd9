//! Command-line driver for gradient noise scale experiments: configs, a
//! resumable run registry, sweeps, single-run experiments and exporters.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod export;
pub mod registry;
pub mod sweep;

pub use config::{parse_config, ExperimentConfig};
pub use error::CliError;

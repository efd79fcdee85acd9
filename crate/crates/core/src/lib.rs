//! Gradient noise scale measurement and large-batch training analysis on
//! desk-scale tasks.
//!
//! * [`landscape`]: tasks with per-example gradients and analytic oracles.
//! * [`gradstats`]: the two-batch-size unbiased estimator and EWMA tracker.
//! * [`optim`]: optimizers, optimal-step algebra, line searches, diagnostics.
//! * [`parsim`]: a deterministic simulated data-parallel trainer.
//! * [`pareto`]: Pareto fronts, tradeoff fits and critical batch size.
//! * [`schedule`]: learning-rate rules, temperature and adaptive batch sizes.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fit;
pub mod gradstats;
pub mod landscape;
pub mod optim;
pub mod pareto;
pub mod parsim;
pub mod schedule;

pub use error::{Error, Result};
pub use landscape::{ParamVector, Task, TaskSpec};

//! Optimizers, the optimal-step algebra of the local quadratic model,
//! line-search measurement of B_noise, and training diagnostics.

mod diagnostics;
mod linesearch;
mod noise;
mod optimizer;

pub use diagnostics::{gradient_autocorrelation, update_optimality_ratio, LagCorrelation};
pub use linesearch::{line_search, search_objective, LineSearchOutcome, StepGrid};
pub use noise::{
    expected_loss_after_step, fit_noise_curve, measure_delta_l_curve, optimal_step_and_improvement, DeltaLPoint,
    NoiseFit, OptimalStep,
};
pub use optimizer::{step, Optimizer, OptimizerConfig, OptimizerKind, OptimizerState};

/// Loss above this multiple of the initial loss marks a run as diverged.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

//! Learning-rate rules and grid search, training temperature, the adaptive
//! batch-size schedule and its predicted efficiency gain γ.

mod adaptive;
mod lr;
mod temperature;
mod tune;

pub use adaptive::{
    adaptive_batch, gamma_of_schedule, predicted_adaptive_front, schedule_totals, AdaptiveConfig, AdaptiveDecision,
    AdaptiveSchedule,
};
pub use lr::{central_lr, fit_lr_rule, LrScalingRule};
pub use temperature::{
    equilibrium_noise_scales, stationary_noise_scales, temperature, temperature_perturbation_run, EquilibriumNoise,
    Perturbation, PerturbationReadings, PerturbationReport, PerturbationWindow, Temperature, TemperatureReading,
};
pub use tune::{lr_run_id, tune_lr, tune_lr_with, LrGrid, LrTrial, LrTuning, TrialSettings};

use serde::{Deserialize, Serialize};

use super::lr::{central_lr, LrScalingRule};
use crate::error::{invalid, Error, Result};
use crate::parsim::{ScheduleHook, StepControl};

/// Batch-size schedule holding the exchange rate `r = B²/B_simple` fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptiveConfig {
    pub exchange_rate: f64,
    pub min_batch: usize,
    pub max_batch: usize,
    #[serde(default = "AdaptiveConfig::default_interval")]
    pub reestimate_interval: usize,
}

impl AdaptiveConfig {
    fn default_interval() -> usize {
        50
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.exchange_rate > 0.0) {
            return Err(invalid("exchange rate must be positive"));
        }
        if self.min_batch == 0 || self.max_batch < self.min_batch {
            return Err(invalid("need 1 ≤ min_batch ≤ max_batch"));
        }
        if self.reestimate_interval == 0 {
            return Err(invalid("re-estimation interval must be positive"));
        }
        Ok(())
    }
}

/// `B = round(√(r·B_simple))`, clamped to the configured bounds.
pub fn adaptive_batch(b_simple_now: f64, config: &AdaptiveConfig) -> usize {
    let raw = (config.exchange_rate * b_simple_now.max(0.0)).sqrt().round();
    let clamped = raw.clamp(config.min_batch as f64, config.max_batch as f64);
    clamped as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveDecision {
    pub step: usize,
    pub b_simple: f64,
    /// Batch requested by the rule, before rounding to whole workers.
    pub target_batch: usize,
    pub batch: usize,
    pub learning_rate: f64,
}

/// Re-targets the batch every `reestimate_interval` steps from the tracked
/// B_simple by varying the worker count at fixed local batch, and sets the
/// learning rate from `lr_rule` at the new batch size. At least two workers
/// are kept so the tracker keeps receiving norm pairs.
#[derive(Debug, Clone)]
pub struct AdaptiveSchedule {
    config: AdaptiveConfig,
    lr_rule: LrScalingRule,
    local_batch: usize,
    decisions: Vec<AdaptiveDecision>,
}

impl AdaptiveSchedule {
    pub fn new(config: AdaptiveConfig, lr_rule: LrScalingRule, local_batch: usize) -> Result<Self> {
        config.validate()?;
        lr_rule.validate()?;
        if local_batch == 0 {
            return Err(invalid("local batch must be positive"));
        }
        Ok(Self { config, lr_rule, local_batch, decisions: Vec::new() })
    }

    pub fn decisions(&self) -> &[AdaptiveDecision] {
        &self.decisions
    }

    /// Worker count (≥ 2) whose global batch is nearest `batch`.
    pub fn workers_for(&self, batch: usize) -> usize {
        ((batch as f64 / self.local_batch as f64).round() as usize).max(2)
    }

    pub fn initial_control(&self) -> Result<StepControl> {
        let workers = self.workers_for(self.config.min_batch);
        Ok(StepControl { learning_rate: central_lr(&self.lr_rule, workers * self.local_batch)?, num_workers: workers })
    }
}

impl ScheduleHook for AdaptiveSchedule {
    fn before_step(&mut self, step: usize, current: StepControl, b_simple: Option<f64>) -> StepControl {
        if step == 1 {
            return self.initial_control().unwrap_or(current);
        }
        let due = (step - 1).is_multiple_of(self.config.reestimate_interval);
        match b_simple {
            Some(b) if due => {
                let target = adaptive_batch(b, &self.config);
                let workers = self.workers_for(target);
                let batch = workers * self.local_batch;
                let learning_rate = central_lr(&self.lr_rule, batch).unwrap_or(current.learning_rate);
                self.decisions.push(AdaptiveDecision { step, b_simple: b, target_batch: target, batch, learning_rate });
                StepControl { learning_rate, num_workers: workers }
            }
            _ => current,
        }
    }
}

/// `γ = (∫√B ds)² / (S_min·E_min)` with `S_min = ∫ds`, `E_min = ∫B ds`, by
/// trapezoidal quadrature on the given grid.
pub fn gamma_of_schedule(s_grid: &[f64], noise: &[f64]) -> Result<f64> {
    if s_grid.len() < 2 || s_grid.len() != noise.len() {
        return Err(Error::InsufficientData("need at least two grid points with matching values".into()));
    }
    check_schedule(s_grid, noise)?;
    let s_min = s_grid[s_grid.len() - 1] - s_grid[0];
    let e_min = trapezoid(s_grid, noise.iter().copied());
    if !(e_min > 0.0) {
        return Err(invalid("noise schedule must not vanish everywhere"));
    }
    let root = trapezoid(s_grid, noise.iter().map(|b| b.sqrt()));
    Ok(root * root / (s_min * e_min))
}

fn check_schedule(s_grid: &[f64], noise: &[f64]) -> Result<()> {
    if noise.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
        return Err(invalid("noise values must be finite and non-negative"));
    }
    if s_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("step grid must be strictly increasing"));
    }
    Ok(())
}

fn trapezoid(s: &[f64], values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    s.windows(2).zip(v.windows(2)).map(|(ds, f)| 0.5 * (ds[1] - ds[0]) * (f[0] + f[1])).sum()
}

/// Totals `S = ∫(1 + B/B(s)) ds` and `E = ∫(B + B(s)) ds` for the ideal
/// schedule `B(s) = √(r·B(s))` (no rounding or clamping).
pub fn schedule_totals(s_grid: &[f64], noise: &[f64], exchange_rate: f64) -> Result<(f64, f64)> {
    if s_grid.len() < 2 || s_grid.len() != noise.len() {
        return Err(Error::InsufficientData("need at least two grid points with matching values".into()));
    }
    check_schedule(s_grid, noise)?;
    if !(exchange_rate > 0.0) {
        return Err(invalid("exchange rate must be positive"));
    }
    // With B = √(rB): B/B = √(B/r), which stays finite as B → 0.
    let steps = trapezoid(s_grid, noise.iter().map(|b| 1.0 + (b / exchange_rate).sqrt()));
    let examples = trapezoid(s_grid, noise.iter().map(|b| b + (exchange_rate * b).sqrt()));
    Ok((steps, examples))
}

/// `S/S_min − 1 = γ·(E/E_min − 1)⁻¹` evaluated at each `E`.
pub fn predicted_adaptive_front(gamma: f64, e_min: f64, s_min: f64, examples: &[f64]) -> Result<Vec<f64>> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(invalid("γ must lie in (0, 1]"));
    }
    examples
        .iter()
        .map(|&e| {
            if e <= e_min {
                Err(Error::OutOfDomain(format!("E = {e} is not above E_min = {e_min}")))
            } else {
                Ok(s_min * (1.0 + gamma / (e / e_min - 1.0)))
            }
        })
        .collect()
}

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::landscape::Task;
use crate::parsim::{train, ScheduleHook, StepControl, TrainConfig, TrainRun};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureReading {
    pub epsilon: f64,
    pub batch: usize,
    pub epsilon_max_ref: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Temperature {
    pub value: f64,
    /// True when the small-batch form ε/B was used.
    pub approximate: bool,
}

/// `T = ε/ε_max` when a reference is available, else `T ≈ ε/B`.
pub fn temperature(reading: &TemperatureReading) -> Result<Temperature> {
    if !(reading.epsilon > 0.0) {
        return Err(invalid("learning rate must be positive"));
    }
    match reading.epsilon_max_ref {
        Some(eps_max) if eps_max > 0.0 => Ok(Temperature { value: reading.epsilon / eps_max, approximate: false }),
        Some(_) => Err(invalid("epsilon_max reference must be positive")),
        None => {
            if reading.batch == 0 {
                return Err(invalid("batch size must be at least 1"));
            }
            Ok(Temperature { value: reading.epsilon / reading.batch as f64, approximate: true })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumNoise {
    pub b_simple: f64,
    pub b_noise: f64,
}

fn check_spectra(hessian: &[f64], sigma: &[f64]) -> Result<()> {
    if hessian.len() != sigma.len() || hessian.is_empty() {
        return Err(Error::IllPosedSpectrum("spectra must be non-empty and of equal length".into()));
    }
    if hessian.iter().any(|h| !(*h > 0.0)) || sigma.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::IllPosedSpectrum("need H > 0 and Σ ≥ 0".into()));
    }
    Ok(())
}

/// Equilibrium noise scales of SGD on a quadratic with H and Σ diagonal in
/// a shared basis, in the small-step limit.
///
/// The stationary covariance M of θ solves `MH + HM = (ε/B)Σ`, so
/// `M = (ε/2B)·H⁻¹Σ`, `E|G|² = tr(H²M) = (ε/2B)·tr(HΣ)` and
/// `E[GᵀHG] = (ε/2B)·tr(H²Σ)`. Hence
///
/// ```text
/// B_simple ≈ (2B/ε)·tr(Σ)/tr(HΣ)
/// B_noise  ≈ (2B/ε)·tr(HΣ)/tr(H²Σ)
/// ```
///
/// Both depend on (ε, B) only through B/ε.
pub fn equilibrium_noise_scales(
    epsilon: f64,
    batch_size: usize,
    hessian: &[f64],
    sigma: &[f64],
) -> Result<EquilibriumNoise> {
    check_spectra(hessian, sigma)?;
    if !(epsilon > 0.0) || batch_size == 0 {
        return Err(invalid("need ε > 0 and B ≥ 1"));
    }
    let tr_sigma: f64 = sigma.iter().sum();
    let tr_h_sigma: f64 = hessian.iter().zip(sigma).map(|(h, s)| h * s).sum();
    let tr_h2_sigma: f64 = hessian.iter().zip(sigma).map(|(h, s)| h * h * s).sum();
    if tr_h_sigma == 0.0 || tr_h2_sigma == 0.0 {
        return Err(Error::IllPosedSpectrum("zero gradient covariance".into()));
    }
    let scale = 2.0 * batch_size as f64 / epsilon;
    Ok(EquilibriumNoise { b_simple: scale * tr_sigma / tr_h_sigma, b_noise: scale * tr_h_sigma / tr_h2_sigma })
}

/// Exact stationary noise scales of plain SGD at finite step size.
///
/// Per eigendirection `θ ← (1 − εh)θ + εh·c̄`, so the stationary variance is
/// `ε·s/(B·h·(2 − εh))` where `s` is the Σ eigenvalue. Requires `εh < 2`
/// everywhere. Reduces to [`equilibrium_noise_scales`] as ε → 0.
pub fn stationary_noise_scales(
    epsilon: f64,
    batch_size: usize,
    hessian: &[f64],
    sigma: &[f64],
) -> Result<EquilibriumNoise> {
    check_spectra(hessian, sigma)?;
    if !(epsilon > 0.0) || batch_size == 0 {
        return Err(invalid("need ε > 0 and B ≥ 1"));
    }
    if let Some(h) = hessian.iter().find(|h| epsilon * **h >= 2.0) {
        return Err(Error::IllPosedSpectrum(format!("SGD is unstable: ε·h = {} ≥ 2", epsilon * h)));
    }
    let b = batch_size as f64;
    let mut tr_sigma = 0.0;
    let mut tr_h_sigma = 0.0;
    let mut gsq = 0.0;
    let mut gthg = 0.0;
    for (h, s) in hessian.iter().zip(sigma) {
        let var = epsilon * s / (b * h * (2.0 - epsilon * h));
        tr_sigma += s;
        tr_h_sigma += h * s;
        gsq += h * h * var;
        gthg += h * h * h * var;
    }
    if gsq == 0.0 {
        return Err(Error::IllPosedSpectrum("zero gradient covariance".into()));
    }
    Ok(EquilibriumNoise { b_simple: tr_sigma / gsq, b_noise: tr_h_sigma / gthg })
}

/// Steps `[start, end)` during which ε and B are rescaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbationWindow {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub lr_factor: f64,
    /// Multiplies the worker count, so the batch scales by the same factor.
    pub worker_factor: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationReadings {
    pub before: f64,
    pub during: f64,
    pub after: f64,
}

#[derive(Debug, Clone)]
pub struct PerturbationReport {
    pub readings: PerturbationReadings,
    pub run: TrainRun,
}

struct PerturbationHook {
    base: StepControl,
    perturbation: Perturbation,
    window: PerturbationWindow,
}

impl ScheduleHook for PerturbationHook {
    fn before_step(&mut self, step: usize, _current: StepControl, _b: Option<f64>) -> StepControl {
        if (self.window.start..self.window.end).contains(&step) {
            StepControl {
                learning_rate: self.base.learning_rate * self.perturbation.lr_factor,
                num_workers: self.base.num_workers * self.perturbation.worker_factor,
            }
        } else {
            self.base
        }
    }
}

/// Trains with ε and B rescaled inside `window` and restored afterwards.
///
/// Each reading is the windowed B_simple (ratio of the mean unbiased
/// moments) over the second half of its phase: before, during and after the
/// window.
pub fn temperature_perturbation_run(
    task: &dyn Task,
    config: &TrainConfig,
    perturbation: Perturbation,
    window: PerturbationWindow,
) -> Result<PerturbationReport> {
    let warmup = config.tracker.warmup as usize;
    let len = window.end.saturating_sub(window.start);
    if len < warmup.max(2) || window.start <= warmup.max(1) {
        return Err(Error::InsufficientWindow { window: len, warmup });
    }
    if window.end + warmup.max(2) > config.max_steps {
        return Err(Error::InsufficientWindow { window: config.max_steps.saturating_sub(window.end), warmup });
    }
    if !(perturbation.lr_factor > 0.0) || perturbation.worker_factor == 0 {
        return Err(invalid("perturbation factors must be positive"));
    }
    let mut cfg = config.clone();
    cfg.stop_goal = None;
    let mut hook = PerturbationHook {
        base: StepControl { learning_rate: config.optimizer.learning_rate, num_workers: config.layout.num_workers },
        perturbation,
        window,
    };
    let run = train(task, &cfg, &mut hook)?;
    if run.diverged() {
        return Err(Error::Diverged("perturbation run diverged".into()));
    }
    let phase_mean = |lo: usize, hi: usize| run.windowed_b_simple(lo + (hi - lo) / 2..hi);
    let readings = PerturbationReadings {
        before: phase_mean(1, window.start)?,
        during: phase_mean(window.start, window.end)?,
        after: phase_mean(window.end, config.max_steps + 1)?,
    };
    Ok(PerturbationReport { readings, run })
}

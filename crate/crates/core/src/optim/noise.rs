use serde::{Deserialize, Serialize};

use super::linesearch::{search_objective, StepGrid};
use crate::error::{invalid, Error, Result};
use crate::fit::{levenberg_marquardt, Evaluated};
use crate::landscape::{ParamVector, RngStream, Task};

/// Closed-form optimal step and loss improvement for a noisy gradient step on
/// the local quadratic model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalStep {
    pub epsilon_opt: f64,
    pub epsilon_max: f64,
    pub delta_l_opt: f64,
    pub delta_l_max: f64,
    pub b_noise: f64,
}

/// `ε_max = |G|²/GᵀHG`, `ΔL_max = ½|G|⁴/GᵀHG`, `B_noise = tr(HΣ)/GᵀHG`, and
/// both optimal quantities scaled by `1/(1 + B_noise/B)`.
pub fn optimal_step_and_improvement(gsq: f64, gthg: f64, tr_hsigma: f64, batch_size: usize) -> Result<OptimalStep> {
    if batch_size == 0 {
        return Err(invalid("batch size must be at least 1"));
    }
    if !(gthg > 0.0) {
        return Err(Error::NegativeCurvature(gthg));
    }
    if tr_hsigma < 0.0 {
        return Err(invalid("tr(HΣ) must be non-negative"));
    }
    let epsilon_max = gsq / gthg;
    let delta_l_max = 0.5 * gsq * gsq / gthg;
    let b_noise = tr_hsigma / gthg;
    let shrink = 1.0 / (1.0 + b_noise / batch_size as f64);
    Ok(OptimalStep {
        epsilon_opt: epsilon_max * shrink,
        epsilon_max,
        delta_l_opt: delta_l_max * shrink,
        delta_l_max,
        b_noise,
    })
}

/// `E[L(θ − εG_est)] = L − ε|G|² + ½ε²(GᵀHG + tr(HΣ)/B)` on a quadratic.
pub fn expected_loss_after_step(
    loss: f64,
    gsq: f64,
    gthg: f64,
    tr_hsigma: f64,
    epsilon: f64,
    batch_size: usize,
) -> f64 {
    loss - epsilon * gsq + 0.5 * epsilon * epsilon * (gthg + tr_hsigma / batch_size as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaLPoint {
    pub batch_size: usize,
    pub delta_l_opt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseFit {
    pub delta_l_max: f64,
    pub b_noise_fit: f64,
    /// RMS of the log-space residuals over the points used.
    pub residual: f64,
    /// Points with non-positive ΔL that were left out of the fit.
    pub dropped: usize,
}

impl NoiseFit {
    pub fn predict(&self, batch_size: f64) -> f64 {
        self.delta_l_max / (1.0 + self.b_noise_fit / batch_size)
    }
}

/// ΔL_opt(B) for each batch size.
///
/// For each B, `repeats` fresh B-batch gradients are drawn (stratified across
/// the repeats) and a single line search is run on the repeat-averaged loss
/// `mean_k L(θ − s·G_k)`. The maximum of that average over `s` is the best
/// expected improvement from one B-batch step.
pub fn measure_delta_l_curve(
    task: &dyn Task,
    params: &ParamVector,
    batch_sizes: &[usize],
    repeats: usize,
    rng: &mut RngStream,
    grid: &StepGrid,
) -> Result<Vec<DeltaLPoint>> {
    params.check_dim(task.dimension())?;
    if repeats == 0 {
        return Err(invalid("repeats must be at least 1"));
    }
    if batch_sizes.windows(2).any(|w| w[0] > w[1]) {
        return Err(invalid("batch sizes must be sorted ascending"));
    }
    let mut points = Vec::with_capacity(batch_sizes.len());
    for &b in batch_sizes {
        let batches = task.stratified_batches(rng, b, repeats)?;
        let directions = batches.iter().map(|batch| task.batch_gradient(params, batch)).collect::<Result<Vec<_>>>()?;
        let rms = (directions.iter().map(ParamVector::norm_sq).sum::<f64>() / repeats as f64).sqrt();
        let outcome = if rms == 0.0 {
            super::LineSearchOutcome::NONE
        } else {
            search_objective(
                |s| {
                    let mut total = 0.0;
                    for d in &directions {
                        total += task.true_loss(&params.offset(s, d))?;
                    }
                    Ok(total / repeats as f64)
                },
                1.0 / rms,
                grid,
            )?
        };
        points.push(DeltaLPoint { batch_size: b, delta_l_opt: outcome.delta_l });
    }
    Ok(points)
}

/// Least-squares fit of `ΔL(B) = ΔL_max / (1 + B_noise/B)` in log space,
/// parameterized by `(log ΔL_max, log B_noise)`.
pub fn fit_noise_curve(points: &[DeltaLPoint]) -> Result<NoiseFit> {
    let used: Vec<&DeltaLPoint> = points.iter().filter(|p| p.delta_l_opt > 0.0).collect();
    let dropped = points.len() - used.len();
    let mut distinct: Vec<usize> = used.iter().map(|p| p.batch_size).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 distinct batch sizes with positive ΔL, got {}",
            distinct.len()
        )));
    }
    let max = used.iter().map(|p| p.delta_l_opt).fold(f64::MIN, f64::max);
    let min = used.iter().map(|p| p.delta_l_opt).fold(f64::MAX, f64::min);
    if max - min <= 1e-12 * max {
        return Err(Error::IllConditionedFit("ΔL is constant across batch sizes".into()));
    }
    let median_b = distinct[distinct.len() / 2] as f64;
    let bs: Vec<f64> = used.iter().map(|p| p.batch_size as f64).collect();
    let logs: Vec<f64> = used.iter().map(|p| p.delta_l_opt.ln()).collect();
    let fit = levenberg_marquardt(
        |p| {
            let b_noise = p[1].exp();
            Evaluated {
                residuals: bs.iter().zip(&logs).map(|(b, y)| p[0] - (1.0 + b_noise / b).ln() - y).collect(),
                jacobian: bs
                    .iter()
                    .map(|b| {
                        let x = b_noise / b;
                        vec![1.0, -x / (1.0 + x)]
                    })
                    .collect(),
            }
        },
        &[max.ln(), median_b.ln()],
    )?;
    let b_noise_fit = fit.params[1].exp();
    if b_noise_fit < 1e-9 * distinct[0] as f64 {
        return Err(Error::IllConditionedFit("B_noise collapsed to zero".into()));
    }
    Ok(NoiseFit { delta_l_max: fit.params[0].exp(), b_noise_fit, residual: fit.rms(), dropped })
}

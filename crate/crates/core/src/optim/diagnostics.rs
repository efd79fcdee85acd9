use serde::{Deserialize, Serialize};

use super::linesearch::{line_search, StepGrid};
use crate::error::{invalid, Result};
use crate::landscape::{ParamVector, Task};

/// Line-search-optimal displacement along `update`, as a fraction of
/// `|update|`. A value of 0.5 means the update overshoots the optimum by 2×.
pub fn update_optimality_ratio(
    task: &dyn Task,
    params: &ParamVector,
    update: &ParamVector,
    grid: &StepGrid,
) -> Result<f64> {
    if update.norm_sq() == 0.0 {
        return Err(invalid("update must be nonzero"));
    }
    let outcome = line_search(task, params, &update.scaled(-1.0), grid)?;
    Ok(outcome.step)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagCorrelation {
    pub lag: usize,
    pub correlation: f64,
    pub pairs: usize,
}

/// Mean cosine similarity between EWMA-smoothed gradients `k` steps apart,
/// for `k = 1..=max_lag`. The smoothing is `m_t = decay·m_{t−1} + (1 − decay)·g_t`
/// started at `m_0 = g_0`. Pairs involving a zero smoothed gradient are
/// skipped, as is a lag with no valid pairs.
pub fn gradient_autocorrelation(series: &[ParamVector], ema_decay: f64, max_lag: usize) -> Result<Vec<LagCorrelation>> {
    if series.len() <= max_lag {
        return Err(invalid(format!("series of length {} is too short for max lag {max_lag}", series.len())));
    }
    if !(0.0..1.0).contains(&ema_decay) {
        return Err(invalid("ema decay must lie in [0, 1)"));
    }
    let mut smoothed: Vec<ParamVector> = Vec::with_capacity(series.len());
    for g in series {
        let next = match smoothed.last() {
            None => g.clone(),
            Some(prev) => {
                let mut m = prev.scaled(ema_decay);
                m.axpy(1.0 - ema_decay, g);
                m
            }
        };
        smoothed.push(next);
    }
    let norms: Vec<f64> = smoothed.iter().map(ParamVector::norm).collect();
    let mut out = Vec::with_capacity(max_lag);
    for lag in 1..=max_lag {
        let mut total = 0.0;
        let mut pairs = 0;
        for t in 0..smoothed.len() - lag {
            let denom = norms[t] * norms[t + lag];
            if denom > 0.0 {
                total += smoothed[t].dot(&smoothed[t + lag]) / denom;
                pairs += 1;
            }
        }
        if pairs > 0 {
            out.push(LagCorrelation { lag, correlation: total / pairs as f64, pairs });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_series_fully_correlated() {
        let g: ParamVector = vec![1.0, -2.0].into();
        let series = vec![g; 20];
        let corr = gradient_autocorrelation(&series, 0.5, 5).unwrap();
        assert_eq!(corr.len(), 5);
        for c in corr {
            assert!((c.correlation - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn alternating_series_without_smoothing() {
        let g: ParamVector = vec![0.3, 1.0, -0.7].into();
        let series: Vec<ParamVector> = (0..30).map(|t| if t % 2 == 0 { g.clone() } else { g.scaled(-1.0) }).collect();
        let corr = gradient_autocorrelation(&series, 0.0, 6).unwrap();
        for c in corr {
            let expected = if c.lag % 2 == 0 { 1.0 } else { -1.0 };
            assert!((c.correlation - expected).abs() < 1e-12, "lag {}", c.lag);
        }
    }

    #[test]
    fn zero_gradients_are_skipped() {
        let series = vec![ParamVector::zeros(2); 10];
        assert!(gradient_autocorrelation(&series, 0.5, 3).unwrap().is_empty());
    }

    #[test]
    fn short_series_rejected() {
        let series = vec![ParamVector::zeros(2); 3];
        assert!(gradient_autocorrelation(&series, 0.5, 3).is_err());
    }
}

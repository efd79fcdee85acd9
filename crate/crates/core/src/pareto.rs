//! Pareto fronts of steps versus examples, the hyperbolic tradeoff fit and
//! the critical batch size.
//!
//! For fixed batch size B the tradeoff `(S/S_min − 1)(E/E_min − 1) = 1` with
//! `E = B·S` reduces to `S = S_min + E_min/B`, which is what gets fitted (in
//! log space). The critical batch size is `B_crit = E_min/S_min`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fit::{levenberg_marquardt, Evaluated};
use crate::gradstats::Ewma;
use crate::parsim::TrainRun;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalMetric {
    TrainLoss,
    TrainError,
}

/// A target value of a training metric, checked after EWMA smoothing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Goal {
    pub metric: GoalMetric,
    pub threshold: f64,
    #[serde(default = "Goal::default_smoothing")]
    pub smoothing_decay: f64,
}

impl Goal {
    fn default_smoothing() -> f64 {
        0.95
    }

    pub fn train_loss(threshold: f64) -> Self {
        Self { metric: GoalMetric::TrainLoss, threshold, smoothing_decay: Self::default_smoothing() }
    }

    pub fn with_smoothing(mut self, decay: f64) -> Self {
        self.smoothing_decay = decay;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.smoothing_decay) {
            return Err(invalid("goal smoothing decay must lie in [0, 1)"));
        }
        if !self.threshold.is_finite() {
            return Err(invalid("goal threshold must be finite"));
        }
        Ok(())
    }
}

/// `count` loss thresholds spaced geometrically from `initial` (exclusive)
/// down to `best` (inclusive).
pub fn goal_ladder(initial: f64, best: f64, count: usize) -> Result<Vec<f64>> {
    if !(initial > 0.0 && best > 0.0 && best < initial) {
        return Err(invalid("goal ladder needs 0 < best < initial"));
    }
    Ok((1..=count).map(|k| initial * (best / initial).powf(k as f64 / count as f64)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Crossing {
    pub steps: usize,
    pub examples: u64,
}

/// First step at which the smoothed goal metric is at or below the
/// threshold. Diverged runs never count as reaching a goal.
pub fn first_crossing(run: &TrainRun, goal: &Goal) -> Option<Crossing> {
    if run.diverged() {
        return None;
    }
    let mut ema = Ewma::new(goal.smoothing_decay);
    for r in &run.records {
        let value = match goal.metric {
            GoalMetric::TrainLoss => Some(r.loss_raw),
            GoalMetric::TrainError => r.error_raw,
        }?;
        if ema.update(value) <= goal.threshold {
            return Some(Crossing { steps: r.step, examples: r.examples });
        }
    }
    None
}

/// A run evaluated against one goal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub run_id: String,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub crossing: Option<Crossing>,
}

/// Best (B, ε) cell for one goal. Steps and examples are means over the
/// cell's seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub batch_size: usize,
    pub steps: f64,
    pub examples: f64,
    /// First run of the winning cell.
    pub run_id: String,
    pub learning_rate: f64,
    /// Number of seeds averaged.
    pub runs: usize,
}

/// Per batch size, the learning rate whose runs reach the goal in the fewest
/// steps on average over seeds (first in input order on ties). A cell counts
/// only if every one of its runs reached the goal; batch sizes without a
/// qualifying cell are omitted.
pub fn pareto_points(outcomes: &[RunOutcome]) -> Vec<ParetoPoint> {
    let mut cells: Vec<((usize, u64), Vec<&RunOutcome>)> = Vec::new();
    for o in outcomes {
        let key = (o.batch_size, o.learning_rate.to_bits());
        match cells.iter_mut().find(|(k, _)| *k == key) {
            Some((_, runs)) => runs.push(o),
            None => cells.push((key, vec![o])),
        }
    }
    let mut best: BTreeMap<usize, ParetoPoint> = BTreeMap::new();
    for (_, runs) in cells {
        let crossings: Option<Vec<Crossing>> = runs.iter().map(|o| o.crossing).collect();
        let Some(crossings) = crossings else { continue };
        let n = crossings.len() as f64;
        let point = ParetoPoint {
            batch_size: runs[0].batch_size,
            steps: crossings.iter().map(|c| c.steps as f64).sum::<f64>() / n,
            examples: crossings.iter().map(|c| c.examples as f64).sum::<f64>() / n,
            run_id: runs[0].run_id.clone(),
            learning_rate: runs[0].learning_rate,
            runs: crossings.len(),
        };
        match best.get(&point.batch_size) {
            Some(prev) if prev.steps <= point.steps => {}
            _ => {
                best.insert(point.batch_size, point);
            }
        }
    }
    best.into_values().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffFit {
    pub e_min: f64,
    pub s_min: f64,
    pub b_crit: f64,
    pub stderr_log_emin: f64,
    pub stderr_log_smin: f64,
    pub stderr_log_bcrit: f64,
    /// RMS of the log-space residuals.
    pub residual: f64,
}

impl TradeoffFit {
    /// `S(B) = S_min + E_min/B`.
    pub fn steps_at_batch(&self, batch_size: f64) -> f64 {
        self.s_min + self.e_min / batch_size
    }

    /// `E(B) = B·S(B) = S_min·B + E_min`.
    pub fn examples_at_batch(&self, batch_size: f64) -> f64 {
        self.s_min * batch_size + self.e_min
    }

    /// Steps on the fitted front at `examples` processed.
    pub fn steps_at_examples(&self, examples: f64) -> Result<f64> {
        if examples <= self.e_min {
            return Err(Error::OutOfDomain(format!("E = {examples} is not above E_min = {}", self.e_min)));
        }
        Ok(self.s_min * (1.0 + 1.0 / (examples / self.e_min - 1.0)))
    }
}

pub fn fit_tradeoff(points: &[ParetoPoint]) -> Result<TradeoffFit> {
    let mut distinct: Vec<usize> = points.iter().map(|p| p.batch_size).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "tradeoff fit needs at least 3 distinct batch sizes, got {}",
            distinct.len()
        )));
    }
    let (lo, hi) = (distinct[0] as f64, distinct[distinct.len() - 1] as f64);
    if hi < 10.0 * lo {
        return Err(Error::InsufficientData(format!("batch sizes must span at least a decade, got {lo}..{hi}")));
    }
    let bs: Vec<f64> = points.iter().map(|p| p.batch_size as f64).collect();
    if points.iter().any(|p| !(p.steps > 0.0 && p.examples > 0.0)) {
        return Err(invalid("Pareto points need positive steps and examples"));
    }
    let log_s: Vec<f64> = points.iter().map(|p| p.steps.ln()).collect();
    let s0 = points.iter().map(|p| p.steps).fold(f64::INFINITY, f64::min);
    let e0 = points.iter().map(|p| p.examples).fold(f64::INFINITY, f64::min);
    let fit = levenberg_marquardt(
        |p| {
            let (s_min, e_min) = (p[0].exp(), p[1].exp());
            let mut residuals = Vec::with_capacity(bs.len());
            let mut jacobian = Vec::with_capacity(bs.len());
            for (b, y) in bs.iter().zip(&log_s) {
                let model = s_min + e_min / b;
                residuals.push(model.ln() - y);
                jacobian.push(vec![s_min / model, e_min / b / model]);
            }
            Evaluated { residuals, jacobian }
        },
        &[(0.5 * s0).ln(), (0.5 * e0).ln()],
    )?;
    let c = &fit.covariance;
    let var_bcrit = c[(0, 0)] + c[(1, 1)] - 2.0 * c[(0, 1)];
    let s_min = fit.params[0].exp();
    let e_min = fit.params[1].exp();
    Ok(TradeoffFit {
        e_min,
        s_min,
        b_crit: e_min / s_min,
        stderr_log_emin: fit.stderr(1),
        stderr_log_smin: fit.stderr(0),
        stderr_log_bcrit: var_bcrit.max(0.0).sqrt(),
        residual: fit.rms(),
    })
}

/// `Σ b_t·ds_t / Σ ds_t` with `ds_t = 1/(1 + b_t/B_t)`, i.e. each step
/// weighted by the full-batch progress it represents.
pub fn weighted_noise_average<I>(samples: I) -> Result<f64>
where
    I: IntoIterator<Item = (f64, f64)>,
{
    let mut num = 0.0;
    let mut den = 0.0;
    for (b, batch) in samples {
        let ds = 1.0 / (1.0 + b / batch);
        num += b * ds;
        den += ds;
    }
    if den == 0.0 {
        return Err(Error::InsufficientData("no tracked noise-scale values".into()));
    }
    Ok(num / den)
}

/// Noise scale averaged over a run's tracked `b_simple` values.
pub fn run_averaged_noise_scale(run: &TrainRun) -> Result<f64> {
    weighted_noise_average(run.records.iter().filter_map(|r| r.b_simple.map(|b| (b, r.batch as f64))))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(id: &str, b: usize, steps: Option<usize>) -> RunOutcome {
        RunOutcome {
            run_id: id.into(),
            batch_size: b,
            learning_rate: id.as_bytes()[0] as f64 / 1000.0,
            crossing: steps.map(|s| Crossing { steps: s, examples: (s * b) as u64 }),
        }
    }

    #[test]
    fn pareto_picks_fastest_run() {
        let pts = pareto_points(&[outcome("a", 64, Some(500)), outcome("b", 64, Some(400))]);
        assert_eq!(pts.len(), 1);
        assert_eq!((pts[0].batch_size, pts[0].steps, pts[0].examples), (64, 400.0, 25600.0));
        assert_eq!(pts[0].run_id, "b");
    }

    #[test]
    fn seeds_of_a_cell_are_averaged() {
        let mut runs = vec![outcome("a", 8, Some(100)), outcome("a", 8, Some(140)), outcome("b", 8, Some(110))];
        let pts = pareto_points(&runs);
        assert_eq!((pts[0].steps, pts[0].examples, pts[0].runs), (110.0, 880.0, 1));
        runs[2].learning_rate = runs[0].learning_rate;
        let pts = pareto_points(&runs);
        assert_eq!((pts[0].steps, pts[0].runs), (350.0 / 3.0, 3));
        runs.push(outcome("a", 8, None));
        assert!(pareto_points(&runs).is_empty());
    }

    #[test]
    fn batch_without_crossing_is_omitted() {
        let pts = pareto_points(&[outcome("a", 1024, None), outcome("b", 16, Some(9))]);
        assert_eq!(pts.iter().map(|p| p.batch_size).collect::<Vec<_>>(), vec![16]);
    }

    #[test]
    fn single_batch_size_is_insufficient() {
        let pts = pareto_points(&[outcome("a", 64, Some(10)), outcome("b", 64, Some(12))]);
        assert!(matches!(fit_tradeoff(&pts), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn narrow_batch_span_is_insufficient() {
        let pts = pareto_points(&[outcome("a", 8, Some(30)), outcome("b", 16, Some(20)), outcome("c", 32, Some(15))]);
        assert!(matches!(fit_tradeoff(&pts), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn ladder_is_geometric() {
        let l = goal_ladder(8.0, 1.0, 3).unwrap();
        assert!((l[0] - 4.0).abs() < 1e-12 && (l[1] - 2.0).abs() < 1e-12 && (l[2] - 1.0).abs() < 1e-12);
        assert!(goal_ladder(1.0, 2.0, 3).is_err());
    }

    #[test]
    fn front_at_critical_batch_is_twice_minimum() {
        let fit = TradeoffFit {
            e_min: 1e4,
            s_min: 100.0,
            b_crit: 100.0,
            stderr_log_emin: 0.0,
            stderr_log_smin: 0.0,
            stderr_log_bcrit: 0.0,
            residual: 0.0,
        };
        assert_eq!(fit.steps_at_batch(100.0), 200.0);
        assert_eq!(fit.examples_at_batch(100.0), 2e4);
        assert!((fit.steps_at_examples(2e4).unwrap() - 200.0).abs() < 1e-9);
        assert!(fit.steps_at_examples(1e4).is_err());
    }
}

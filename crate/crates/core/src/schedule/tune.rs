use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lr::{central_lr, LrScalingRule};
use crate::error::{invalid, Error, Result};
use crate::gradstats::TrackerConfig;
use crate::landscape::Task;
use crate::optim::OptimizerConfig;
use crate::pareto::{first_crossing, Goal};
use crate::parsim::{train, FixedSchedule, TrainConfig, TrainRun, WorkerLayout};

/// Geometric learning-rate grid centred on the rule's prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrGrid {
    /// Decades covered on each side of the centre.
    #[serde(default = "LrGrid::default_span")]
    pub span_decades: f64,
    #[serde(default = "LrGrid::default_density")]
    pub points_per_decade: usize,
    /// Number of one-decade extensions allowed when an edge wins.
    #[serde(default = "LrGrid::default_expansions")]
    pub max_expansions: usize,
}

impl LrGrid {
    fn default_span() -> f64 {
        1.0
    }
    fn default_density() -> usize {
        4
    }
    fn default_expansions() -> usize {
        3
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.span_decades >= 1.0) {
            return Err(invalid("learning-rate grid must span at least one decade on each side"));
        }
        if self.points_per_decade == 0 {
            return Err(invalid("learning-rate grid density must be positive"));
        }
        Ok(())
    }

    fn half_width(&self) -> i64 {
        (self.span_decades * self.points_per_decade as f64).round() as i64
    }
}

impl Default for LrGrid {
    fn default() -> Self {
        Self {
            span_decades: Self::default_span(),
            points_per_decade: Self::default_density(),
            max_expansions: Self::default_expansions(),
        }
    }
}

/// Everything about a tuning run except the batch size and learning rate.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSettings {
    /// Optimizer template; its learning rate is overwritten per trial.
    pub optimizer: OptimizerConfig,
    pub max_workers: usize,
    pub max_steps: usize,
    /// Goal used for scoring.
    pub goal: Goal,
    /// Goal that ends each run early. Defaults to `goal`; a harder goal
    /// keeps the runs useful for other thresholds.
    pub stop_goal: Option<Goal>,
    pub tracker: TrackerConfig,
    pub loss_smoothing: f64,
    /// Every trial trains once per seed; the same seeds are used across the
    /// grid (common random numbers).
    pub seeds: Vec<u64>,
}

impl TrialSettings {
    pub fn new(optimizer: OptimizerConfig, goal: Goal, max_steps: usize, seeds: Vec<u64>) -> Self {
        Self {
            optimizer,
            max_workers: 8,
            max_steps,
            goal,
            stop_goal: None,
            tracker: TrackerConfig::default(),
            loss_smoothing: 0.95,
            seeds,
        }
    }

    /// Configuration of the run trained for one (B, ε, seed) cell.
    pub fn run_config(&self, batch_size: usize, learning_rate: f64, seed: u64) -> Result<TrainConfig> {
        let mut optimizer = self.optimizer;
        optimizer.learning_rate = learning_rate;
        Ok(TrainConfig {
            run_id: lr_run_id(batch_size, learning_rate, seed),
            optimizer,
            layout: WorkerLayout::for_global_batch(batch_size, self.max_workers)?,
            max_steps: self.max_steps,
            stop_goal: Some(self.stop_goal.unwrap_or(self.goal)),
            tracker: self.tracker,
            loss_smoothing: self.loss_smoothing,
            seed,
        })
    }
}

/// One learning rate, trained once per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrTrial {
    /// Run ids, one per seed.
    pub run_ids: Vec<String>,
    pub learning_rate: f64,
    /// Grid offset from the centre, in grid spacings.
    pub grid_index: i64,
    /// Which expansion round produced this trial (0 = initial grid).
    pub round: usize,
    /// Mean steps to the scoring goal, if every seed reached it.
    pub steps_to_goal: Option<f64>,
    /// Mean final smoothed loss over seeds.
    pub final_smoothed_loss: f64,
    /// Whether any seed diverged.
    pub diverged: bool,
}

impl LrTrial {
    /// Reached goal (fewer steps first) < unreached (lower final loss
    /// first) < diverged.
    fn rank(&self, other: &Self) -> Ordering {
        let class = |t: &Self| match (t.diverged, t.steps_to_goal) {
            (true, _) => 2,
            (false, Some(_)) => 0,
            (false, None) => 1,
        };
        class(self).cmp(&class(other)).then_with(|| match (self.steps_to_goal, other.steps_to_goal) {
            (Some(a), Some(b)) if a != b => a.total_cmp(&b),
            _ => self.final_smoothed_loss.total_cmp(&other.final_smoothed_loss),
        })
    }
}

#[derive(Debug, Clone)]
pub struct LrTuning {
    pub batch_size: usize,
    pub central_lr: f64,
    pub best_lr: f64,
    /// Every trial in ascending learning-rate order.
    pub trials: Vec<LrTrial>,
    /// Number of expansion rounds that were triggered.
    pub expansions: usize,
    /// The runs behind `trials`, grouped per trial in the same order.
    pub runs: Vec<Vec<TrainRun>>,
}

impl LrTuning {
    pub fn best_trial(&self) -> &LrTrial {
        self.trials.iter().find(|t| t.learning_rate == self.best_lr).expect("best trial is in the table")
    }

    pub fn best_runs(&self) -> &[TrainRun] {
        let i = self.trials.iter().position(|t| t.learning_rate == self.best_lr).expect("best trial is in the table");
        &self.runs[i]
    }
}

pub fn lr_run_id(batch_size: usize, learning_rate: f64, seed: u64) -> String {
    format!("B{batch_size}-lr{learning_rate:.6e}-s{seed}")
}

/// Grid search at one batch size around `central_lr(rule, B)`. Trials are
/// trained in parallel; when the winner sits on an edge of the grid searched
/// so far, another decade is added on that side.
pub fn tune_lr(
    task: &dyn Task,
    batch_size: usize,
    rule: &LrScalingRule,
    grid: &LrGrid,
    settings: &TrialSettings,
) -> Result<LrTuning> {
    tune_lr_with(batch_size, rule, grid, settings, &|config: &TrainConfig| train(task, config, &mut FixedSchedule))
}

/// [`tune_lr`] with a caller-supplied trainer, e.g. one that reuses runs
/// already on disk. The trainer must be deterministic in its config.
pub fn tune_lr_with<F>(
    batch_size: usize,
    rule: &LrScalingRule,
    grid: &LrGrid,
    settings: &TrialSettings,
    trainer: &F,
) -> Result<LrTuning>
where
    F: Fn(&TrainConfig) -> Result<TrainRun> + Sync,
{
    grid.validate()?;
    settings.goal.validate()?;
    if settings.seeds.is_empty() {
        return Err(invalid("at least one seed is required"));
    }
    let centre = central_lr(rule, batch_size)?;
    let density = grid.points_per_decade as i64;
    let lr_at = |k: i64| centre * 10f64.powf(k as f64 / density as f64);

    let mut lo = -grid.half_width();
    let mut hi = grid.half_width();
    let mut pending: Vec<i64> = (lo..=hi).collect();
    let mut results: Vec<(LrTrial, Vec<TrainRun>)> = Vec::new();
    let mut round = 0;
    let mut expansions = 0;

    loop {
        let fresh: Vec<(LrTrial, Vec<TrainRun>)> = pending
            .par_iter()
            .map(|&k| run_trial(trainer, batch_size, lr_at(k), k, round, settings))
            .collect::<Result<_>>()?;
        results.extend(fresh);

        let best = results.iter().map(|(t, _)| t).min_by(|a, b| a.rank(b)).expect("grid is non-empty");
        if best.diverged {
            return Err(Error::NoViableLr { batch_size });
        }
        if expansions >= grid.max_expansions {
            break;
        }
        let k = best.grid_index;
        pending = if k == lo {
            lo -= density;
            (lo..k).collect()
        } else if k == hi {
            hi += density;
            (k + 1..=hi).collect()
        } else {
            break;
        };
        expansions += 1;
        round += 1;
    }

    results.sort_by_key(|(t, _)| t.grid_index);
    let best = results.iter().map(|(t, _)| t).min_by(|a, b| a.rank(b)).expect("non-empty").clone();
    let (trials, runs) = results.into_iter().unzip();
    Ok(LrTuning { batch_size, central_lr: centre, best_lr: best.learning_rate, trials, expansions, runs })
}

fn run_trial<F>(
    trainer: &F,
    batch_size: usize,
    learning_rate: f64,
    grid_index: i64,
    round: usize,
    settings: &TrialSettings,
) -> Result<(LrTrial, Vec<TrainRun>)>
where
    F: Fn(&TrainConfig) -> Result<TrainRun> + Sync,
{
    let runs = settings
        .seeds
        .par_iter()
        .map(|&seed| trainer(&settings.run_config(batch_size, learning_rate, seed)?))
        .collect::<Result<Vec<_>>>()?;
    let n = runs.len() as f64;
    let diverged = runs.iter().any(TrainRun::diverged);
    let steps: Option<Vec<usize>> = runs.iter().map(|r| first_crossing(r, &settings.goal).map(|c| c.steps)).collect();
    let trial = LrTrial {
        run_ids: runs.iter().map(|r| r.run_id.clone()).collect(),
        learning_rate,
        grid_index,
        round,
        steps_to_goal: steps.map(|s| s.iter().sum::<usize>() as f64 / n),
        final_smoothed_loss: if diverged {
            f64::INFINITY
        } else {
            runs.iter().map(|r| r.records.last().map_or(r.initial_loss, |x| x.loss_smoothed)).sum::<f64>() / n
        },
        diverged,
    };
    Ok((trial, runs))
}

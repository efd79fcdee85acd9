//! Batch-size × learning-rate sweep with resumable, content-hashed runs.

use std::path::Path;
use std::sync::Mutex;

use gradnoise::pareto::{first_crossing, fit_tradeoff, pareto_points, Goal, ParetoPoint, RunOutcome, TradeoffFit};
use gradnoise::parsim::{train, FixedSchedule, TrainConfig, TrainRun};
use gradnoise::schedule::{fit_lr_rule, tune_lr_with, LrScalingRule, LrTuning};
use gradnoise::Task;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::registry::{BatchFailure, CellEntry, CellStatus, Registry};

/// Contents of `pareto/goal_<i>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalReport {
    pub goal_index: usize,
    pub goal: Goal,
    pub points: Vec<ParetoPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<TradeoffFit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_error: Option<String>,
    /// Best learning rate per batch size for this goal.
    pub tuned_lr: Vec<TunedLr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_rule: Option<LrScalingRule>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TunedLr {
    pub batch_size: usize,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Default)]
pub struct SweepSummary {
    pub trained: usize,
    pub reused: usize,
    pub failures: Vec<BatchFailure>,
    pub reports: Vec<GoalReport>,
}

pub fn goal_path(index: usize) -> String {
    format!("pareto/goal_{index}.json")
}

/// Runs the sweep into `out_dir` on a pool of `jobs` threads. Runs already
/// recorded for the same config are loaded rather than retrained, so a
/// rerun reproduces every output byte for byte.
pub fn run_sweep(config: &ExperimentConfig, out_dir: &Path, jobs: usize) -> Result<SweepSummary, CliError> {
    let task = config.task.build()?;
    let registry = Mutex::new(Registry::open(out_dir, &config.hash())?);
    registry.lock().expect("registry lock").write_artifact("config.toml", config.to_toml().as_bytes())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("jobs: {e}")))?;
    let cache = RunCache { registry: &registry, counts: Mutex::new((0, 0)), failure: Mutex::new(None) };
    let trainer = |cfg: &TrainConfig| cache.train(task.as_ref(), cfg);

    let settings = config.trial_settings();
    let mut tunings: Vec<LrTuning> = Vec::new();
    let mut failures = Vec::new();
    for &b in &config.batch_sizes {
        let result = pool.install(|| tune_lr_with(b, &config.lr_rule, &config.lr_grid, &settings, &trainer));
        if let Some(e) = cache.failure.lock().expect("failure lock").take() {
            return Err(e);
        }
        match result {
            Ok(t) => tunings.push(t),
            Err(e @ gradnoise::Error::NoViableLr { .. }) => {
                failures.push(BatchFailure { batch_size: b, error: e.to_string() })
            }
            Err(e) => return Err(e.into()),
        }
    }

    let (trained, reused) = *cache.counts.lock().expect("count lock");
    drop(cache);
    let mut registry = registry.into_inner().expect("registry lock");
    let mut cells = Vec::new();
    for t in &tunings {
        for trial in &t.trials {
            let status = if trial.diverged {
                CellStatus::Diverged
            } else if trial.steps_to_goal.is_some() {
                CellStatus::Reached
            } else {
                CellStatus::Unreached
            };
            cells.push(CellEntry {
                batch_size: t.batch_size,
                learning_rate: trial.learning_rate,
                status,
                steps_to_goal: trial.steps_to_goal,
            });
        }
    }

    let mut reports = Vec::with_capacity(config.goals.len());
    for (i, goal) in config.goals.iter().enumerate() {
        let report = goal_report(i, goal, &tunings);
        registry.write_json_artifact(&goal_path(i), &report)?;
        reports.push(report);
    }
    let manifest = registry.manifest_mut();
    manifest.cells = cells;
    manifest.batch_failures = failures.clone();
    registry.save()?;

    if tunings.is_empty() {
        return Err(gradnoise::Error::NoViableLr { batch_size: config.batch_sizes[0] }.into());
    }
    Ok(SweepSummary { trained, reused, failures, reports })
}

/// Trainer that reuses intact recorded runs and records new ones. Registry
/// failures are kept aside and surfaced after the tuning call.
struct RunCache<'a> {
    registry: &'a Mutex<Registry>,
    counts: Mutex<(usize, usize)>,
    failure: Mutex<Option<CliError>>,
}

impl RunCache<'_> {
    fn train(&self, task: &dyn Task, cfg: &TrainConfig) -> gradnoise::Result<TrainRun> {
        let fail = |e: CliError| {
            let msg = e.to_string();
            self.failure.lock().expect("failure lock").get_or_insert(e);
            gradnoise::Error::Io(std::io::Error::other(msg))
        };
        let cached = self.registry.lock().expect("registry lock").lookup(&cfg.run_id).map_err(fail)?;
        if let Some(run) = cached {
            self.counts.lock().expect("count lock").1 += 1;
            return Ok(run);
        }
        let run = train(task, cfg, &mut FixedSchedule)?;
        let mut reg = self.registry.lock().expect("registry lock");
        reg.record(&run).and_then(|()| reg.save()).map_err(fail)?;
        self.counts.lock().expect("count lock").0 += 1;
        Ok(run)
    }
}

fn goal_report(index: usize, goal: &Goal, tunings: &[LrTuning]) -> GoalReport {
    let mut outcomes = Vec::new();
    for t in tunings {
        for (trial, runs) in t.trials.iter().zip(&t.runs) {
            for run in runs {
                outcomes.push(RunOutcome {
                    run_id: run.run_id.clone(),
                    batch_size: t.batch_size,
                    learning_rate: trial.learning_rate,
                    crossing: first_crossing(run, goal),
                });
            }
        }
    }
    let points = pareto_points(&outcomes);
    let (fit, fit_error) = match fit_tradeoff(&points) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let tuned_lr: Vec<TunedLr> =
        points.iter().map(|p| TunedLr { batch_size: p.batch_size, learning_rate: p.learning_rate }).collect();
    let pairs: Vec<(usize, f64)> = tuned_lr.iter().map(|t| (t.batch_size, t.learning_rate)).collect();
    let lr_rule = fit_lr_rule(&pairs, None).ok();
    GoalReport { goal_index: index, goal: *goal, points, fit, fit_error, tuned_lr, lr_rule }
}

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::reduce::all_reduce_mean;
use crate::error::{invalid, Error, Result};
use crate::gradstats::{unbiased_moments, Ewma, NoiseScaleTracker, NormPair, TrackerConfig};
use crate::landscape::{rng_stream, ParamVector, RngStream, Task};
use crate::optim::{Optimizer, OptimizerConfig, DIVERGENCE_FACTOR};
use crate::pareto::{Goal, GoalMetric};

/// `num_workers` shards of `local_batch` examples each. The tracker sees
/// `b_small = local_batch` and `b_big = num_workers · local_batch`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerLayout {
    pub num_workers: usize,
    pub local_batch: usize,
}

impl WorkerLayout {
    pub fn new(num_workers: usize, local_batch: usize) -> Result<Self> {
        if num_workers == 0 || local_batch == 0 {
            return Err(invalid("worker count and local batch must be positive"));
        }
        Ok(Self { num_workers, local_batch })
    }

    /// Splits `global_batch` over the largest worker count `≤ max_workers`
    /// that divides it.
    pub fn for_global_batch(global_batch: usize, max_workers: usize) -> Result<Self> {
        if global_batch == 0 {
            return Err(invalid("batch size must be at least 1"));
        }
        let workers =
            (1..=max_workers.max(1).min(global_batch)).rev().find(|w| global_batch.is_multiple_of(*w)).unwrap_or(1);
        Self::new(workers, global_batch / workers)
    }

    pub fn global_batch(&self) -> usize {
        self.num_workers * self.local_batch
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GoalReached,
    MaxSteps,
    Diverged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Examples processed through this step.
    pub examples: u64,
    /// Full-data training loss after the update.
    pub loss_raw: f64,
    pub loss_smoothed: f64,
    /// Full-data error rate, for classification tasks.
    pub error_raw: Option<f64>,
    /// Mean over workers of the local squared gradient norm.
    pub gsq_local: f64,
    /// Squared norm of the all-reduced gradient.
    pub gsq_global: f64,
    pub b_simple: Option<f64>,
    pub learning_rate: f64,
    pub batch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub run_id: String,
    pub task: String,
    pub optimizer: OptimizerConfig,
    pub layout: WorkerLayout,
    pub seed: u64,
    pub initial_loss: f64,
    pub records: Vec<StepRecord>,
    pub termination: Termination,
}

impl TrainRun {
    pub fn steps(&self) -> usize {
        self.records.len()
    }

    pub fn diverged(&self) -> bool {
        self.termination == Termination::Diverged
    }

    /// B_simple over the steps in `steps`, as the ratio of the windowed means
    /// of the two unbiased moment estimates. Unlike averaging the tracked
    /// ratio, this carries no ratio bias beyond the final division. Steps run
    /// with a single worker carry no norm pair and are skipped.
    pub fn windowed_b_simple(&self, steps: std::ops::Range<usize>) -> Result<f64> {
        let local = self.layout.local_batch;
        let mut gsq = 0.0;
        let mut trsigma = 0.0;
        let mut n = 0usize;
        for r in self.records.iter().filter(|r| steps.contains(&r.step) && r.batch > local) {
            let m = unbiased_moments(&NormPair::new(r.gsq_local, r.gsq_global, local, r.batch)?)?;
            gsq += m.gsq;
            trsigma += m.trsigma;
            n += 1;
        }
        if n == 0 {
            return Err(Error::InsufficientData(format!("no norm pairs in steps {}..{}", steps.start, steps.end)));
        }
        if !(gsq > 0.0) {
            return Err(Error::InsufficientData("windowed |G|² estimate is not positive".into()));
        }
        Ok(trsigma / gsq)
    }

    /// The run cut after `steps` records.
    pub fn truncated(&self, steps: usize) -> TrainRun {
        let mut run = self.clone();
        run.records.truncate(steps);
        run
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub run_id: String,
    pub optimizer: OptimizerConfig,
    pub layout: WorkerLayout,
    pub max_steps: usize,
    /// Stop once this goal's smoothed metric reaches its threshold.
    pub stop_goal: Option<Goal>,
    pub tracker: TrackerConfig,
    /// Decay of the recorded `loss_smoothed` column.
    pub loss_smoothing: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(optimizer: OptimizerConfig, layout: WorkerLayout, max_steps: usize, seed: u64) -> Self {
        Self {
            run_id: "run".into(),
            optimizer,
            layout,
            max_steps,
            stop_goal: None,
            tracker: TrackerConfig::default(),
            loss_smoothing: 0.95,
            seed,
        }
    }
}

/// Learning rate and worker count for the next step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    pub learning_rate: f64,
    pub num_workers: usize,
}

/// Per-step hook that may change the learning rate or worker count.
pub trait ScheduleHook {
    /// `step` is the 1-based index of the step about to run.
    fn before_step(&mut self, step: usize, current: StepControl, b_simple: Option<f64>) -> StepControl;
}

/// Keeps the configured learning rate and layout.
#[derive(Debug, Clone, Copy, Default)]
pub struct FixedSchedule;

impl ScheduleHook for FixedSchedule {
    fn before_step(&mut self, _step: usize, current: StepControl, _b_simple: Option<f64>) -> StepControl {
        current
    }
}

/// What an observer sees after each step.
pub struct StepView<'a> {
    pub record: &'a StepRecord,
    /// Parameters after the update.
    pub params: &'a ParamVector,
    pub gradient: &'a ParamVector,
    pub update: &'a ParamVector,
}

const PARALLEL_WORK_THRESHOLD: usize = 1 << 14;

pub fn train(task: &dyn Task, config: &TrainConfig, schedule: &mut dyn ScheduleHook) -> Result<TrainRun> {
    train_observed(task, config, schedule, &mut |_| {})
}

/// [`train`] with a callback after every step.
pub fn train_observed(
    task: &dyn Task,
    config: &TrainConfig,
    schedule: &mut dyn ScheduleHook,
    observer: &mut dyn FnMut(&StepView<'_>),
) -> Result<TrainRun> {
    if config.max_steps == 0 {
        return Err(invalid("max_steps must be at least 1"));
    }
    if !(0.0..1.0).contains(&config.loss_smoothing) {
        return Err(invalid("loss smoothing decay must lie in [0, 1)"));
    }
    let dim = task.dimension();
    let mut optimizer = Optimizer::new(config.optimizer, dim)?;
    let mut tracker = NoiseScaleTracker::new(config.tracker)?;
    let local_batch = config.layout.local_batch;
    let mut params = task.initial_params();
    let initial = task.evaluate(&params)?;
    let mut loss_ema = Ewma::new(config.loss_smoothing);
    let mut goal_ema = config.stop_goal.map(|g| Ewma::new(g.smoothing_decay));
    let mut streams: Vec<RngStream> = Vec::new();
    let mut control =
        StepControl { learning_rate: config.optimizer.learning_rate, num_workers: config.layout.num_workers };
    let mut examples: u64 = 0;
    let mut records = Vec::with_capacity(config.max_steps.min(1 << 16));
    let mut termination = Termination::MaxSteps;

    for step in 1..=config.max_steps {
        control = schedule.before_step(step, control, tracker.b_simple());
        if control.num_workers == 0 || !(control.learning_rate > 0.0) {
            return Err(invalid(format!("schedule produced an invalid control at step {step}")));
        }
        optimizer.set_learning_rate(control.learning_rate);
        let workers = control.num_workers;
        while streams.len() < workers {
            streams.push(rng_stream(config.seed, streams.len() as u64));
        }

        let compute = |rng: &mut RngStream| -> Result<ParamVector> {
            let batch = task.sample_batch(rng, local_batch)?;
            task.batch_gradient(&params, &batch)
        };
        let local: Vec<ParamVector> = if workers > 1 && workers * local_batch * dim >= PARALLEL_WORK_THRESHOLD {
            streams[..workers].par_iter_mut().map(compute).collect::<Result<_>>()?
        } else {
            streams[..workers].iter_mut().map(compute).collect::<Result<_>>()?
        };
        let global = all_reduce_mean(&local)?;
        let gsq_local = local.iter().map(ParamVector::norm_sq).sum::<f64>() / workers as f64;
        let gsq_global = global.norm_sq();
        if workers > 1 && gsq_local.is_finite() && gsq_global.is_finite() {
            tracker.observe(&NormPair::new(gsq_local, gsq_global, local_batch, workers * local_batch)?)?;
        }

        let update = match optimizer.step(&global, &mut params) {
            Ok(u) => u,
            Err(Error::Diverged(_)) => {
                termination = Termination::Diverged;
                break;
            }
            Err(e) => return Err(e),
        };
        let batch = workers * local_batch;
        examples += batch as u64;
        let eval = task.evaluate(&params)?;
        let loss_smoothed = loss_ema.update(eval.loss);
        let record = StepRecord {
            step,
            examples,
            loss_raw: eval.loss,
            loss_smoothed,
            error_raw: eval.error,
            gsq_local,
            gsq_global,
            b_simple: tracker.b_simple(),
            learning_rate: control.learning_rate,
            batch,
        };
        observer(&StepView { record: &record, params: &params, gradient: &global, update: &update });
        records.push(record);

        if !eval.loss.is_finite() || eval.loss > DIVERGENCE_FACTOR * initial.loss.abs().max(f64::MIN_POSITIVE) {
            termination = Termination::Diverged;
            break;
        }
        if let (Some(goal), Some(ema)) = (config.stop_goal, goal_ema.as_mut()) {
            let metric = match goal.metric {
                GoalMetric::TrainLoss => Some(eval.loss),
                GoalMetric::TrainError => eval.error,
            };
            if let Some(m) = metric {
                if ema.update(m) <= goal.threshold {
                    termination = Termination::GoalReached;
                    break;
                }
            }
        }
    }

    Ok(TrainRun {
        run_id: config.run_id.clone(),
        task: task.describe(),
        optimizer: config.optimizer,
        layout: config.layout,
        seed: config.seed,
        initial_loss: initial.loss,
        records,
        termination,
    })
}

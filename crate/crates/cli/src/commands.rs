//! Single-experiment subcommands. Each writes its artifacts into the
//! registry of the output directory.

use std::path::Path;

use gradnoise::landscape::{analytic_noise_scales, rng_stream, AnalyticNoiseScales};
use gradnoise::optim::{
    fit_noise_curve, gradient_autocorrelation, measure_delta_l_curve, update_optimality_ratio, DeltaLPoint,
    LagCorrelation, NoiseFit, StepGrid,
};
use gradnoise::pareto::{first_crossing, run_averaged_noise_scale, Crossing, Goal};
use gradnoise::parsim::{
    replay_metrics, train, train_observed, FixedSchedule, Termination, TrainConfig, TrainRun, WorkerLayout,
};
use gradnoise::schedule::{
    central_lr, temperature_perturbation_run, AdaptiveConfig, AdaptiveDecision, AdaptiveSchedule, LrScalingRule,
    Perturbation, PerturbationReadings, PerturbationWindow,
};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::registry::Registry;
use crate::sweep::{goal_path, GoalReport};

/// Opens the registry for `config` and records the config itself.
pub fn open_registry(config: &ExperimentConfig, out_dir: &Path) -> Result<Registry, CliError> {
    let mut registry = Registry::open(out_dir, &config.hash())?;
    registry.write_artifact("config.toml", config.to_toml().as_bytes())?;
    Ok(registry)
}

fn base_config(
    config: &ExperimentConfig,
    run_id: String,
    batch_size: usize,
    learning_rate: f64,
    max_steps: usize,
) -> Result<TrainConfig, CliError> {
    let layout = WorkerLayout::for_global_batch(batch_size, config.layout.max_workers)?;
    let mut cfg =
        TrainConfig::new(config.optimizer.with_learning_rate(learning_rate), layout, max_steps, config.seeds[0]);
    cfg.run_id = run_id;
    cfg.tracker = config.tracker;
    cfg.loss_smoothing = config.loss_smoothing;
    Ok(cfg)
}

fn write_run_csv(registry: &mut Registry, rel: &str, run: &TrainRun) -> Result<(), CliError> {
    let csv = replay_metrics(run).to_csv_string()?;
    registry.write_artifact(rel, csv.as_bytes())?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureSummary {
    pub run_id: String,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub steps: usize,
    pub termination: Termination,
    pub initial_loss: f64,
    pub final_loss_smoothed: f64,
    pub final_b_simple: Option<f64>,
    /// Windowed B_simple over the second half of the run.
    pub late_b_simple: Option<f64>,
    /// Batch-weighted mean of the tracked values.
    pub run_averaged_b_simple: Option<f64>,
}

/// One fixed-schedule run with noise-scale tracking. Defaults: the first
/// configured batch size at the rule's central learning rate.
pub fn measure_noise(
    config: &ExperimentConfig,
    out_dir: &Path,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
) -> Result<MeasureSummary, CliError> {
    let task = config.task.build()?;
    let b = batch_size.unwrap_or(config.batch_sizes[0]);
    if b == 0 {
        return Err(CliError::Config("batch-size: must be at least 1".into()));
    }
    let lr = match learning_rate {
        Some(lr) => lr,
        None => central_lr(&config.lr_rule, b)?,
    };
    let run_id = format!("measure-B{b}-lr{lr:.6e}-s{}", config.seeds[0]);
    let cfg = base_config(config, run_id, b, lr, config.max_steps)?;
    let run = train(task.as_ref(), &cfg, &mut FixedSchedule)?;
    let steps = run.steps();
    let summary = MeasureSummary {
        run_id: run.run_id.clone(),
        batch_size: b,
        learning_rate: lr,
        seed: run.seed,
        steps,
        termination: run.termination,
        initial_loss: run.initial_loss,
        final_loss_smoothed: run.records.last().map_or(run.initial_loss, |r| r.loss_smoothed),
        final_b_simple: run.records.last().and_then(|r| r.b_simple),
        late_b_simple: run.windowed_b_simple(steps / 2 + 1..steps + 1).ok(),
        run_averaged_b_simple: run_averaged_noise_scale(&run).ok(),
    };
    let mut registry = open_registry(config, out_dir)?;
    write_run_csv(&mut registry, "measure/run.csv", &run)?;
    registry.write_json_artifact("measure/summary.json", &summary)?;
    registry.save()?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaLReport {
    pub repeats: usize,
    pub points: Vec<DeltaLPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<NoiseFit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_error: Option<String>,
    /// Exact values at the initial point, for quadratic tasks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analytic: Option<AnalyticNoiseScales>,
}

/// ΔL_opt(B) at the initial parameters over the configured batch sizes,
/// with the fitted `ΔL_max / (1 + B_noise/B)` curve.
pub fn delta_l(config: &ExperimentConfig, out_dir: &Path) -> Result<DeltaLReport, CliError> {
    let task = config.task.build()?;
    let theta = task.initial_params();
    let mut batch_sizes = config.batch_sizes.clone();
    batch_sizes.sort_unstable();
    batch_sizes.dedup();
    let repeats = config.delta_l.as_ref().map_or(200, |d| d.repeats);
    let mut rng = rng_stream(config.seeds[0], 0);
    let points = measure_delta_l_curve(task.as_ref(), &theta, &batch_sizes, repeats, &mut rng, &StepGrid::default())?;
    let (fit, fit_error) = match fit_noise_curve(&points) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let analytic = task.as_quadratic().and_then(|_| analytic_noise_scales(task.as_ref(), &theta).ok());
    let report = DeltaLReport { repeats, points, fit, fit_error, analytic };
    let mut registry = open_registry(config, out_dir)?;
    registry.write_json_artifact("delta_l.json", &report)?;
    registry.save()?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalCrossing {
    pub goal_index: usize,
    pub threshold: f64,
    pub crossing: Option<Crossing>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveReport {
    pub exchange_rate: f64,
    pub lr_rule: LrScalingRule,
    pub steps: usize,
    pub examples: u64,
    pub termination: Termination,
    pub crossings: Vec<GoalCrossing>,
    pub decisions: Vec<AdaptiveDecision>,
}

/// Trains with the batch re-targeted to `√(r · B_simple)`. The exchange rate
/// `r` comes from the config or else from the first goal's fitted B_crit of
/// a sweep in the same output directory.
pub fn adaptive(config: &ExperimentConfig, out_dir: &Path) -> Result<AdaptiveReport, CliError> {
    let section = config.adaptive.unwrap_or_default();
    let mut registry = open_registry(config, out_dir)?;
    let exchange_rate = match section.exchange_rate {
        Some(r) => r,
        None => swept_b_crit(&registry)?,
    };
    let adaptive_cfg = AdaptiveConfig {
        exchange_rate,
        min_batch: section.min_batch,
        max_batch: section.max_batch,
        reestimate_interval: section.reestimate_interval,
    };
    let mut schedule = AdaptiveSchedule::new(adaptive_cfg, config.lr_rule, section.local_batch)?;
    let control = schedule.initial_control()?;
    let layout = WorkerLayout::new(control.num_workers, section.local_batch)?;
    let mut cfg = TrainConfig::new(
        config.optimizer.with_learning_rate(control.learning_rate),
        layout,
        config.max_steps,
        config.seeds[0],
    );
    cfg.run_id = format!("adaptive-s{}", config.seeds[0]);
    cfg.tracker = config.tracker;
    cfg.loss_smoothing = config.loss_smoothing;
    cfg.stop_goal = Some(config.hardest_goal());
    let task = config.task.build()?;
    let run = train(task.as_ref(), &cfg, &mut schedule)?;
    let report = AdaptiveReport {
        exchange_rate,
        lr_rule: config.lr_rule,
        steps: run.steps(),
        examples: run.records.last().map_or(0, |r| r.examples),
        termination: run.termination,
        crossings: crossings(&config.goals, &run),
        decisions: schedule.decisions().to_vec(),
    };
    write_run_csv(&mut registry, "adaptive/run.csv", &run)?;
    registry.write_json_artifact("adaptive/schedule.json", &report)?;
    registry.save()?;
    Ok(report)
}

fn crossings(goals: &[Goal], run: &TrainRun) -> Vec<GoalCrossing> {
    goals
        .iter()
        .enumerate()
        .map(|(i, g)| GoalCrossing { goal_index: i, threshold: g.threshold, crossing: first_crossing(run, g) })
        .collect()
}

fn swept_b_crit(registry: &Registry) -> Result<f64, CliError> {
    let missing = || {
        CliError::Config(
            "adaptive.exchange_rate: not set and no fitted B_crit from a sweep in the output directory".into(),
        )
    };
    let bytes = registry.read_artifact(&goal_path(0))?.ok_or_else(missing)?;
    let report: GoalReport = serde_json::from_slice(&bytes)?;
    report.fit.map(|f| f.b_crit).ok_or_else(missing)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureReport {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub perturbation: Perturbation,
    pub window: PerturbationWindow,
    pub steps: usize,
    pub readings: PerturbationReadings,
    /// Ratio expected at equal temperature: B changes by the worker factor
    /// and the temperature ε/B by `lr_factor / worker_factor`.
    pub expected_during_ratio: f64,
    pub during_ratio: f64,
    pub after_ratio: f64,
}

/// Rescales ε (and optionally B) over a window of a long run and reports
/// the windowed B_simple before, during and after.
pub fn temperature(config: &ExperimentConfig, out_dir: &Path) -> Result<TemperatureReport, CliError> {
    let section = config
        .temperature
        .ok_or_else(|| CliError::Config("temperature: section is required for this command".into()))?;
    let task = config.task.build()?;
    let cfg = base_config(
        config,
        format!("temperature-B{}-s{}", section.batch_size, config.seeds[0]),
        section.batch_size,
        section.learning_rate,
        section.steps,
    )?;
    let perturbation = Perturbation { lr_factor: section.lr_factor, worker_factor: section.worker_factor };
    let window = PerturbationWindow { start: section.window_start, end: section.window_end };
    let out = temperature_perturbation_run(task.as_ref(), &cfg, perturbation, window)?;
    let r = out.readings;
    let report = TemperatureReport {
        batch_size: section.batch_size,
        learning_rate: section.learning_rate,
        perturbation,
        window,
        steps: section.steps,
        readings: r,
        expected_during_ratio: section.worker_factor as f64 / section.lr_factor,
        during_ratio: r.during / r.before,
        after_ratio: r.after / r.before,
    };
    let mut registry = open_registry(config, out_dir)?;
    write_run_csv(&mut registry, "temperature/run.csv", &out.run)?;
    registry.write_json_artifact("temperature/readings.json", &report)?;
    registry.save()?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub step: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseReport {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub steps: usize,
    /// Mean line-search-optimal fraction of the update over the second half.
    pub mean_ratio: f64,
    pub autocorrelation: Vec<LagCorrelation>,
    pub ratios: Vec<RatioRow>,
}

/// Update-optimality ratio and gradient autocorrelation over the second
/// half of a fixed-schedule run.
pub fn diagnose(config: &ExperimentConfig, out_dir: &Path) -> Result<DiagnoseReport, CliError> {
    let section =
        config.diagnose.ok_or_else(|| CliError::Config("diagnose: section is required for this command".into()))?;
    let task = config.task.build()?;
    let cfg = base_config(
        config,
        format!("diagnose-B{}-s{}", section.batch_size, config.seeds[0]),
        section.batch_size,
        section.learning_rate,
        section.steps,
    )?;
    let grid = StepGrid::default();
    let half = section.steps / 2;
    let mut before = task.initial_params();
    let mut ratios = Vec::new();
    let mut grads = Vec::new();
    let mut failure = None;
    let run = train_observed(task.as_ref(), &cfg, &mut FixedSchedule, &mut |v| {
        if v.record.step > half && failure.is_none() {
            match update_optimality_ratio(task.as_ref(), &before, v.update, &grid) {
                Ok(ratio) => ratios.push(RatioRow { step: v.record.step, ratio }),
                Err(e) => failure = Some(e),
            }
            grads.push(v.gradient.clone());
        }
        before = v.params.clone();
    })?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    if run.diverged() {
        return Err(gradnoise::Error::Diverged("diagnose run diverged".into()).into());
    }
    let autocorrelation = gradient_autocorrelation(&grads, section.ema_decay, section.max_lag)?;
    let mean_ratio = ratios.iter().map(|r| r.ratio).sum::<f64>() / ratios.len() as f64;
    let report = DiagnoseReport {
        batch_size: section.batch_size,
        learning_rate: section.learning_rate,
        steps: run.steps(),
        mean_ratio,
        autocorrelation,
        ratios,
    };
    let mut registry = open_registry(config, out_dir)?;
    registry.write_json_artifact("diagnose/diagnose.json", &report)?;
    registry.save()?;
    Ok(report)
}

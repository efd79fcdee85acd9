//! Experiment configs: a single TOML document per experiment.

use std::path::PathBuf;

use gradnoise::gradstats::TrackerConfig;
use gradnoise::landscape::TaskSpec;
use gradnoise::optim::{OptimizerConfig, OptimizerKind};
use gradnoise::pareto::Goal;
use gradnoise::schedule::{LrGrid, LrScalingRule, TrialSettings};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskSpec,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    pub lr_rule: LrScalingRule,
    pub batch_sizes: Vec<usize>,
    #[serde(default)]
    pub lr_grid: LrGrid,
    pub goals: Vec<Goal>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub layout: LayoutPolicy,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default)]
    pub tracker: TrackerConfig,
    /// Decay of the recorded `loss_smoothed` column.
    #[serde(default = "default_loss_smoothing")]
    pub loss_smoothing: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_l: Option<DeltaLSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adaptive: Option<AdaptiveSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<TemperatureSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnose: Option<DiagnoseSection>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_max_steps() -> usize {
    10_000
}

fn default_loss_smoothing() -> f64 {
    0.95
}

/// Optimizer kind and hyperparameters; the learning rate comes from the
/// rule or the grid search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    #[serde(default = "default_kind")]
    pub kind: OptimizerKind,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon_adam")]
    pub epsilon_adam: f64,
}

fn default_kind() -> OptimizerKind {
    OptimizerKind::Sgd
}
fn default_momentum() -> f64 {
    0.9
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon_adam() -> f64 {
    1e-8
}

impl Default for OptimizerSection {
    fn default() -> Self {
        Self {
            kind: default_kind(),
            momentum: default_momentum(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon_adam: default_epsilon_adam(),
        }
    }
}

impl OptimizerSection {
    pub fn with_learning_rate(&self, learning_rate: f64) -> OptimizerConfig {
        OptimizerConfig {
            kind: self.kind,
            learning_rate,
            momentum: self.momentum,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon_adam: self.epsilon_adam,
        }
    }
}

/// Global batch B is split over the largest worker count ≤ `max_workers`
/// that divides B.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutPolicy {
    #[serde(default = "default_max_workers")]
    pub max_workers: usize,
}

fn default_max_workers() -> usize {
    8
}

impl Default for LayoutPolicy {
    fn default() -> Self {
        Self { max_workers: default_max_workers() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeltaLSection {
    #[serde(default = "default_repeats")]
    pub repeats: usize,
}

fn default_repeats() -> usize {
    200
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptiveSection {
    /// Examples traded per step saved; defaults to the fitted B_crit of the
    /// first goal when a sweep exists in the output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exchange_rate: Option<f64>,
    #[serde(default = "default_min_batch")]
    pub min_batch: usize,
    #[serde(default = "default_max_batch")]
    pub max_batch: usize,
    #[serde(default = "default_interval")]
    pub reestimate_interval: usize,
    #[serde(default = "default_local_batch")]
    pub local_batch: usize,
}

impl Default for AdaptiveSection {
    fn default() -> Self {
        Self {
            exchange_rate: None,
            min_batch: default_min_batch(),
            max_batch: default_max_batch(),
            reestimate_interval: default_interval(),
            local_batch: default_local_batch(),
        }
    }
}

fn default_min_batch() -> usize {
    2
}
fn default_max_batch() -> usize {
    4096
}
fn default_interval() -> usize {
    50
}
fn default_local_batch() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemperatureSection {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_factor: f64,
    #[serde(default = "default_worker_factor")]
    pub worker_factor: usize,
    pub window_start: usize,
    pub window_end: usize,
    pub steps: usize,
}

fn default_worker_factor() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseSection {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub steps: usize,
    #[serde(default = "default_max_lag")]
    pub max_lag: usize,
    #[serde(default)]
    pub ema_decay: f64,
}

fn default_max_lag() -> usize {
    5
}

fn bad(path: impl Into<String>, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{}: {msg}", path.into()))
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.task.build().map_err(|e| bad("task", e))?;
        if self.batch_sizes.is_empty() {
            return Err(bad("batch_sizes", "at least one batch size is required"));
        }
        for (i, b) in self.batch_sizes.iter().enumerate() {
            if *b == 0 {
                return Err(bad(format!("batch_sizes[{i}]"), "batch size must be at least 1"));
            }
        }
        if self.goals.is_empty() {
            return Err(bad("goals", "at least one goal is required"));
        }
        for (i, g) in self.goals.iter().enumerate() {
            g.validate().map_err(|e| bad(format!("goals[{i}]"), e))?;
        }
        if self.seeds.is_empty() {
            return Err(bad("seeds", "at least one seed is required"));
        }
        self.lr_rule.validate().map_err(|e| bad("lr_rule", e))?;
        self.lr_grid.validate().map_err(|e| bad("lr_grid", e))?;
        self.tracker.validate().map_err(|e| bad("tracker", e))?;
        self.optimizer.with_learning_rate(1.0).validate().map_err(|e| bad("optimizer", e))?;
        if self.layout.max_workers == 0 {
            return Err(bad("layout.max_workers", "must be at least 1"));
        }
        if self.max_steps == 0 {
            return Err(bad("max_steps", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.loss_smoothing) {
            return Err(bad("loss_smoothing", "must lie in [0, 1)"));
        }
        if let Some(a) = &self.adaptive {
            if a.min_batch == 0 || a.max_batch < a.min_batch {
                return Err(bad("adaptive", "need 1 ≤ min_batch ≤ max_batch"));
            }
            if a.reestimate_interval == 0 || a.local_batch == 0 {
                return Err(bad("adaptive", "reestimate_interval and local_batch must be positive"));
            }
            if a.exchange_rate.is_some_and(|r| !(r > 0.0)) {
                return Err(bad("adaptive.exchange_rate", "must be positive"));
            }
        }
        if let Some(t) = &self.temperature {
            if t.batch_size == 0 || !(t.learning_rate > 0.0) || !(t.lr_factor > 0.0) || t.worker_factor == 0 {
                return Err(bad("temperature", "batch size, rates and factors must be positive"));
            }
            if !(t.window_start < t.window_end && t.window_end <= t.steps) {
                return Err(bad("temperature", "need window_start < window_end ≤ steps"));
            }
        }
        if let Some(d) = &self.diagnose {
            if d.batch_size == 0 || !(d.learning_rate > 0.0) || d.steps <= d.max_lag {
                return Err(bad("diagnose", "need a positive batch and rate, and steps > max_lag"));
            }
        }
        Ok(())
    }

    /// The hardest goal (lowest threshold per metric order given); sweep runs
    /// stop there so every easier goal is crossed on the way.
    pub fn hardest_goal(&self) -> Goal {
        *self.goals.iter().min_by(|a, b| a.threshold.total_cmp(&b.threshold)).expect("validated config has goals")
    }

    pub fn trial_settings(&self) -> TrialSettings {
        let goal = self.hardest_goal();
        let mut s =
            TrialSettings::new(self.optimizer.with_learning_rate(1.0), goal, self.max_steps, self.seeds.clone());
        s.max_workers = self.layout.max_workers;
        s.tracker = self.tracker;
        s.loss_smoothing = self.loss_smoothing;
        s
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes to JSON");
        hex::encode(Sha256::digest(&canonical))
    }
}

/// Parses and validates a config. Schema errors name the offending path.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    let de = toml::Deserializer::parse(text).map_err(|e| CliError::Config(e.to_string()))?;
    let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(format!("{path}: {}", e.into_inner().message().trim()))
    })?;
    config.validate()?;
    Ok(config)
}

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::landscape::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Momentum,
    Adam,
}

/// Fields that do not apply to `kind` are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    #[serde(default = "OptimizerConfig::default_momentum")]
    pub momentum: f64,
    #[serde(default = "OptimizerConfig::default_beta1")]
    pub beta1: f64,
    #[serde(default = "OptimizerConfig::default_beta2")]
    pub beta2: f64,
    #[serde(default = "OptimizerConfig::default_epsilon")]
    pub epsilon_adam: f64,
}

impl OptimizerConfig {
    fn default_momentum() -> f64 {
        0.9
    }

    fn default_beta1() -> f64 {
        0.9
    }

    fn default_beta2() -> f64 {
        0.999
    }

    fn default_epsilon() -> f64 {
        1e-8
    }

    pub fn sgd(learning_rate: f64) -> Self {
        Self::with_kind(OptimizerKind::Sgd, learning_rate)
    }

    pub fn momentum(learning_rate: f64, momentum: f64) -> Self {
        Self { momentum, ..Self::with_kind(OptimizerKind::Momentum, learning_rate) }
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self::with_kind(OptimizerKind::Adam, learning_rate)
    }

    pub fn with_kind(kind: OptimizerKind, learning_rate: f64) -> Self {
        Self {
            kind,
            learning_rate,
            momentum: Self::default_momentum(),
            beta1: Self::default_beta1(),
            beta2: Self::default_beta2(),
            epsilon_adam: Self::default_epsilon(),
        }
    }

    pub fn with_learning_rate(mut self, learning_rate: f64) -> Self {
        self.learning_rate = learning_rate;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        match self.kind {
            OptimizerKind::Sgd => {}
            OptimizerKind::Momentum => {
                if !(0.0..1.0).contains(&self.momentum) {
                    return Err(invalid(format!("momentum must lie in [0, 1), got {}", self.momentum)));
                }
            }
            OptimizerKind::Adam => {
                for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
                    if !(b > 0.0 && b < 1.0) {
                        return Err(invalid(format!("{name} must lie in (0, 1), got {b}")));
                    }
                }
                if !(self.epsilon_adam > 0.0) {
                    return Err(invalid("epsilon_adam must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// Momentum buffer and/or Adam accumulators.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OptimizerState {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(dim: usize) -> Self {
        Self { first: vec![0.0; dim], second: vec![0.0; dim], step: 0 }
    }
}

/// Applies one update in place and returns the update vector δθ.
pub fn step(
    config: &OptimizerConfig,
    state: &mut OptimizerState,
    gradient: &ParamVector,
    params: &mut ParamVector,
) -> Result<ParamVector> {
    if gradient.len() != params.len() {
        return Err(invalid(format!(
            "gradient length {} does not match parameter length {}",
            gradient.len(),
            params.len()
        )));
    }
    if !gradient.is_finite() {
        return Err(Error::Diverged("non-finite gradient".into()));
    }
    if state.first.len() != params.len() {
        *state = OptimizerState::new(params.len());
    }
    state.step += 1;
    let lr = config.learning_rate;
    let update: ParamVector = match config.kind {
        OptimizerKind::Sgd => gradient.scaled(-lr),
        OptimizerKind::Momentum => {
            for (v, g) in state.first.iter_mut().zip(gradient.iter()) {
                *v = config.momentum * *v + g;
            }
            state.first.iter().map(|v| -lr * v).collect()
        }
        OptimizerKind::Adam => {
            let (b1, b2) = (config.beta1, config.beta2);
            let c1 = 1.0 - b1.powi(state.step as i32);
            let c2 = 1.0 - b2.powi(state.step as i32);
            state
                .first
                .iter_mut()
                .zip(state.second.iter_mut())
                .zip(gradient.iter())
                .map(|((m, v), g)| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    -lr * (*m / c1) / ((*v / c2).sqrt() + config.epsilon_adam)
                })
                .collect()
        }
    };
    params.axpy(1.0, &update);
    Ok(update)
}

/// Config plus state, for callers that drive many steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    pub state: OptimizerState,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, dim: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, state: OptimizerState::new(dim) })
    }

    pub fn set_learning_rate(&mut self, learning_rate: f64) {
        self.config.learning_rate = learning_rate;
    }

    pub fn step(&mut self, gradient: &ParamVector, params: &mut ParamVector) -> Result<ParamVector> {
        step(&self.config, &mut self.state, gradient, params)
    }
}

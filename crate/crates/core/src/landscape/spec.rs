use serde::{Deserialize, Serialize};

use super::{Activation, DatasetSpec, LogisticTask, MlpTask, ParamVector, QuadraticTask, Task};
use crate::error::Result;

fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticSpec {
    pub hessian_eigenvalues: Vec<f64>,
    pub shift_covariance_eigenvalues: Vec<f64>,
    /// Explicit starting point; otherwise `init_scale · N(0, I)` from `seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Vec<f64>>,
    #[serde(default = "default_scale")]
    pub init_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogisticSpec {
    #[serde(flatten)]
    pub dataset: DatasetSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    /// Hidden layer widths; input width comes from the dataset.
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub dataset: DatasetSpec,
    #[serde(default = "default_scale")]
    pub init_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Declarative task description as it appears in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TaskSpec {
    Quadratic(QuadraticSpec),
    Logistic(LogisticSpec),
    Mlp(MlpSpec),
}

impl QuadraticSpec {
    /// `dim` Hessian eigenvalues log-spaced over `[h_min, h_max]` with a
    /// constant shift variance.
    pub fn log_spaced(dim: usize, h_min: f64, h_max: f64, shift_variance: f64) -> Self {
        let hessian = (0..dim)
            .map(|i| {
                let t = if dim > 1 { i as f64 / (dim - 1) as f64 } else { 0.0 };
                h_min * (h_max / h_min).powf(t)
            })
            .collect();
        Self {
            hessian_eigenvalues: hessian,
            shift_covariance_eigenvalues: vec![shift_variance; dim],
            initial: None,
            init_scale: 1.0,
            seed: 0,
        }
    }

    pub fn build(&self) -> Result<QuadraticTask> {
        match &self.initial {
            Some(init) => QuadraticTask::with_initial(
                self.hessian_eigenvalues.clone(),
                self.shift_covariance_eigenvalues.clone(),
                ParamVector::new(init.clone()),
                self.seed,
            ),
            None => QuadraticTask::new(
                self.hessian_eigenvalues.clone(),
                self.shift_covariance_eigenvalues.clone(),
                self.init_scale,
                self.seed,
            ),
        }
    }
}

impl TaskSpec {
    pub fn build(&self) -> Result<Box<dyn Task>> {
        Ok(match self {
            TaskSpec::Quadratic(q) => Box::new(q.build()?),
            TaskSpec::Logistic(l) => Box::new(LogisticTask::new(&l.dataset)?),
            TaskSpec::Mlp(m) => {
                Box::new(MlpTask::new(&m.layer_widths, m.activation, &m.dataset, m.init_scale, m.seed)?)
            }
        })
    }
}

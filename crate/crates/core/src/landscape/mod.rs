//! Desk-scale training tasks.
//!
//! Every task exposes per-example losses and gradients over a data
//! distribution ρ. [`QuadraticTask`] additionally carries exact oracles for
//! the gradient covariance and both noise scales; the dataset tasks
//! ([`LogisticTask`], [`MlpTask`]) treat their finite synthetic dataset as ρ.

mod dataset;
mod logistic;
mod mlp;
mod param;
mod quadratic;
mod spec;

pub use dataset::{DatasetSpec, SyntheticDataset};
pub use logistic::LogisticTask;
pub use mlp::{Activation, MlpTask};
pub use param::ParamVector;
pub use quadratic::{AnalyticNoiseScales, QuadraticTask};
pub use spec::{LogisticSpec, MlpSpec, QuadraticSpec, TaskSpec};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};

/// Owned random stream. Streams are never shared between callers.
pub type RngStream = ChaCha8Rng;

/// Independent stream `index` derived from `seed`.
pub fn rng_stream(seed: u64, index: u64) -> RngStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// A batch of examples drawn with replacement from ρ.
#[derive(Debug, Clone, PartialEq)]
pub enum ExampleBatch {
    /// Quadratic task: `batch_size` shift vectors stored row-major.
    Shifts { dim: usize, shifts: Vec<f64> },
    /// Dataset task: indices into the dataset.
    Indices(Vec<usize>),
}

impl ExampleBatch {
    pub fn batch_size(&self) -> usize {
        match self {
            ExampleBatch::Shifts { dim, shifts } => shifts.len() / (*dim).max(1),
            ExampleBatch::Indices(idx) => idx.len(),
        }
    }

    /// Row `i` of a shift batch.
    pub fn shift(&self, i: usize) -> Option<&[f64]> {
        match self {
            ExampleBatch::Shifts { dim, shifts } => shifts.get(i * dim..(i + 1) * dim),
            ExampleBatch::Indices(_) => None,
        }
    }
}

/// Full-data evaluation of a parameter vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    /// Misclassification rate, for classification tasks.
    pub error: Option<f64>,
}

pub trait Task: Send + Sync {
    fn dimension(&self) -> usize;

    fn describe(&self) -> String;

    fn initial_params(&self) -> ParamVector;

    fn sample_batch(&self, rng: &mut RngStream, batch_size: usize) -> Result<ExampleBatch>;

    /// `count` batches whose draws are stratified across the set (Latin
    /// hypercube over the sampling uniforms). Each batch is marginally a
    /// valid with-replacement draw; the set as a whole has lower variance
    /// for averaged statistics.
    fn stratified_batches(&self, rng: &mut RngStream, batch_size: usize, count: usize) -> Result<Vec<ExampleBatch>> {
        (0..count).map(|_| self.sample_batch(rng, batch_size)).collect()
    }

    fn batch_loss(&self, params: &ParamVector, batch: &ExampleBatch) -> Result<f64>;

    /// Mean of per-example gradients over the batch.
    fn batch_gradient(&self, params: &ParamVector, batch: &ExampleBatch) -> Result<ParamVector>;

    fn evaluate(&self, params: &ParamVector) -> Result<Evaluation>;

    fn true_loss_and_gradient(&self, params: &ParamVector) -> Result<(f64, ParamVector)>;

    fn true_loss(&self, params: &ParamVector) -> Result<f64> {
        Ok(self.evaluate(params)?.loss)
    }

    fn as_quadratic(&self) -> Option<&QuadraticTask> {
        None
    }
}

pub fn sample_batch(task: &dyn Task, rng: &mut RngStream, batch_size: usize) -> Result<ExampleBatch> {
    task.sample_batch(rng, batch_size)
}

pub fn batch_gradient(task: &dyn Task, params: &ParamVector, batch: &ExampleBatch) -> Result<ParamVector> {
    task.batch_gradient(params, batch)
}

pub fn true_loss_and_gradient(task: &dyn Task, params: &ParamVector) -> Result<(f64, ParamVector)> {
    task.true_loss_and_gradient(params)
}

fn require_quadratic(task: &dyn Task) -> Result<&QuadraticTask> {
    task.as_quadratic().ok_or_else(|| Error::UnsupportedTask(format!("{} has no analytic oracle", task.describe())))
}

/// Eigenvalues of Σ = H Σ_c H in the shared eigenbasis. Independent of θ.
pub fn analytic_gradient_covariance(task: &dyn Task, params: &ParamVector) -> Result<Vec<f64>> {
    let quad = require_quadratic(task)?;
    params.check_dim(quad.dimension())?;
    Ok(quad.gradient_covariance())
}

pub fn analytic_noise_scales(task: &dyn Task, params: &ParamVector) -> Result<AnalyticNoiseScales> {
    require_quadratic(task)?.noise_scales(params)
}

pub(crate) fn check_batch_size(batch_size: usize) -> Result<()> {
    if batch_size == 0 {
        return Err(invalid("batch size must be at least 1"));
    }
    Ok(())
}

/// Stratified uniforms in (0, 1): for each of `columns` columns, one draw per
/// stratum `[k/count, (k+1)/count)` in shuffled order. Row-major
/// `count × columns`.
pub(crate) fn latin_hypercube(rng: &mut RngStream, count: usize, columns: usize) -> Vec<f64> {
    use rand::seq::SliceRandom;
    let mut out = vec![0.0; count * columns];
    let mut strata: Vec<usize> = (0..count).collect();
    for col in 0..columns {
        strata.shuffle(rng);
        for (row, &stratum) in strata.iter().enumerate() {
            let jitter: f64 = rng.sample(rand_distr::Open01);
            out[row * columns + col] = (stratum as f64 + jitter) / count as f64;
        }
    }
    out
}

/// Numerically stable `log(1 + exp(z))`.
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

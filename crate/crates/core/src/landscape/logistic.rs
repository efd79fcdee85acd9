use super::{sigmoid, softplus, DatasetSpec, Evaluation, ExampleBatch, ParamVector, RngStream, SyntheticDataset, Task};
use crate::error::Result;

/// Binary logistic regression; parameters are the weights followed by a bias.
#[derive(Debug, Clone)]
pub struct LogisticTask {
    data: SyntheticDataset,
}

impl LogisticTask {
    pub fn new(spec: &DatasetSpec) -> Result<Self> {
        Ok(Self { data: SyntheticDataset::generate(spec)? })
    }

    pub fn dataset(&self) -> &SyntheticDataset {
        &self.data
    }

    fn logit(&self, params: &[f64], i: usize) -> f64 {
        let d = self.data.dim();
        let x = self.data.features(i);
        params[..d].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + params[d]
    }

    fn example_loss(&self, params: &[f64], i: usize) -> f64 {
        let z = self.logit(params, i);
        softplus(z) - self.data.label(i) * z
    }

    fn accumulate_gradient(&self, params: &[f64], i: usize, out: &mut [f64]) {
        let d = self.data.dim();
        let residual = sigmoid(self.logit(params, i)) - self.data.label(i);
        for (o, x) in out[..d].iter_mut().zip(self.data.features(i)) {
            *o += residual * x;
        }
        out[d] += residual;
    }

    fn mean_gradient(&self, params: &ParamVector, indices: impl Iterator<Item = usize>) -> ParamVector {
        let mut grad = vec![0.0; self.dimension()];
        let mut n = 0usize;
        for i in indices {
            self.accumulate_gradient(params, i, &mut grad);
            n += 1;
        }
        let inv = 1.0 / n as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        grad.into()
    }
}

impl Task for LogisticTask {
    fn dimension(&self) -> usize {
        self.data.dim() + 1
    }

    fn describe(&self) -> String {
        format!("logistic(d={}, n={})", self.data.dim(), self.data.len())
    }

    fn initial_params(&self) -> ParamVector {
        ParamVector::zeros(self.dimension())
    }

    fn sample_batch(&self, rng: &mut RngStream, batch_size: usize) -> Result<ExampleBatch> {
        self.data.sample(rng, batch_size)
    }

    fn stratified_batches(&self, rng: &mut RngStream, batch_size: usize, count: usize) -> Result<Vec<ExampleBatch>> {
        self.data.stratified(rng, batch_size, count)
    }

    fn batch_loss(&self, params: &ParamVector, batch: &ExampleBatch) -> Result<f64> {
        params.check_dim(self.dimension())?;
        let idx = self.data.indices_of(batch)?;
        Ok(idx.iter().map(|&i| self.example_loss(params, i)).sum::<f64>() / idx.len() as f64)
    }

    fn batch_gradient(&self, params: &ParamVector, batch: &ExampleBatch) -> Result<ParamVector> {
        params.check_dim(self.dimension())?;
        let idx = self.data.indices_of(batch)?;
        Ok(self.mean_gradient(params, idx.iter().copied()))
    }

    fn evaluate(&self, params: &ParamVector) -> Result<Evaluation> {
        params.check_dim(self.dimension())?;
        let n = self.data.len();
        let mut loss = 0.0;
        let mut wrong = 0usize;
        for i in 0..n {
            let z = self.logit(params, i);
            let y = self.data.label(i);
            loss += softplus(z) - y * z;
            if (z > 0.0) != (y > 0.5) {
                wrong += 1;
            }
        }
        Ok(Evaluation { loss: loss / n as f64, error: Some(wrong as f64 / n as f64) })
    }

    fn true_loss_and_gradient(&self, params: &ParamVector) -> Result<(f64, ParamVector)> {
        let loss = self.evaluate(params)?.loss;
        Ok((loss, self.mean_gradient(params, 0..self.data.len())))
    }
}

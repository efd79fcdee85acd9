use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    rng_stream, sigmoid, softplus, DatasetSpec, Evaluation, ExampleBatch, ParamVector, RngStream, SyntheticDataset,
    Task,
};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    /// Offset of the row-major weight block; biases follow it.
    offset: usize,
}

impl Layer {
    fn bias_offset(&self) -> usize {
        self.offset + self.fan_in * self.fan_out
    }
}

/// Fully connected network with hidden layers of `hidden_widths` and a single
/// output logit trained with binary cross-entropy. Gradients come from
/// hand-written backpropagation.
#[derive(Debug, Clone)]
pub struct MlpTask {
    data: SyntheticDataset,
    layers: Vec<Layer>,
    activation: Activation,
    initial: ParamVector,
}

impl MlpTask {
    pub fn new(
        hidden_widths: &[usize],
        activation: Activation,
        dataset: &DatasetSpec,
        init_scale: f64,
        seed: u64,
    ) -> Result<Self> {
        if hidden_widths.contains(&0) {
            return Err(invalid("layer widths must be positive"));
        }
        if !(init_scale > 0.0) {
            return Err(invalid("init_scale must be positive"));
        }
        let data = SyntheticDataset::generate(dataset)?;
        let mut widths = vec![data.dim()];
        widths.extend_from_slice(hidden_widths);
        widths.push(1);
        let mut layers = Vec::with_capacity(widths.len() - 1);
        let mut offset = 0;
        for pair in widths.windows(2) {
            layers.push(Layer { fan_in: pair[0], fan_out: pair[1], offset });
            offset += pair[0] * pair[1] + pair[1];
        }
        let mut rng = rng_stream(seed, 0);
        let mut initial = vec![0.0; offset];
        for layer in &layers {
            let std = init_scale / (layer.fan_in as f64).sqrt();
            for w in &mut initial[layer.offset..layer.bias_offset()] {
                *w = std * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Ok(Self { data, layers, activation, initial: initial.into() })
    }

    pub fn dataset(&self) -> &SyntheticDataset {
        &self.data
    }

    /// Pre-activations of every layer for example `i`.
    fn forward(&self, params: &[f64], i: usize) -> Vec<Vec<f64>> {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut input: Vec<f64> = self.data.features(i).to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let w = &params[layer.offset..layer.bias_offset()];
            let b = &params[layer.bias_offset()..layer.bias_offset() + layer.fan_out];
            let z: Vec<f64> = (0..layer.fan_out)
                .map(|o| {
                    let row = &w[o * layer.fan_in..(o + 1) * layer.fan_in];
                    row.iter().zip(&input).map(|(a, x)| a * x).sum::<f64>() + b[o]
                })
                .collect();
            if l + 1 < self.layers.len() {
                input = z.iter().map(|v| self.activation.apply(*v)).collect();
            }
            pre.push(z);
        }
        pre
    }

    fn logit(&self, params: &[f64], i: usize) -> f64 {
        self.forward(params, i).last().expect("at least one layer")[0]
    }

    fn accumulate_gradient(&self, params: &[f64], i: usize, grad: &mut [f64]) {
        let pre = self.forward(params, i);
        let n_layers = self.layers.len();
        let logit = pre[n_layers - 1][0];
        let mut delta = vec![sigmoid(logit) - self.data.label(i)];
        for l in (0..n_layers).rev() {
            let layer = self.layers[l];
            let activations: Vec<f64> = if l == 0 {
                self.data.features(i).to_vec()
            } else {
                pre[l - 1].iter().map(|z| self.activation.apply(*z)).collect()
            };
            for o in 0..layer.fan_out {
                let row = layer.offset + o * layer.fan_in;
                for (k, a) in activations.iter().enumerate() {
                    grad[row + k] += delta[o] * a;
                }
                grad[layer.bias_offset() + o] += delta[o];
            }
            if l > 0 {
                let w = &params[layer.offset..layer.bias_offset()];
                delta = (0..layer.fan_in)
                    .map(|k| {
                        let back: f64 = (0..layer.fan_out).map(|o| w[o * layer.fan_in + k] * delta[o]).sum();
                        back * self.activation.derivative(pre[l - 1][k])
                    })
                    .collect();
            }
        }
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

impl Task for MlpTask {
    fn dimension(&self) -> usize {
        self.initial.len()
    }

    fn describe(&self) -> String {
        let widths: Vec<String> = self.layers.iter().map(|l| l.fan_out.to_string()).collect();
        format!("mlp({}→{}, n={})", self.data.dim(), widths.join("→"), self.data.len())
    }

    fn initial_params(&self) -> ParamVector {
        self.initial.clone()
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
        let total: f64 = idx
            .iter()
            .map(|&i| {
                let z = self.logit(params, i);
                softplus(z) - self.data.label(i) * z
            })
            .sum();
        Ok(total / idx.len() as f64)
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

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{check_batch_size, latin_hypercube, rng_stream, ExampleBatch, RngStream};
use crate::error::{invalid, Result};

/// Two Gaussian classes with a shared isotropic spread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub dimension: usize,
    /// Exactly two mean vectors, one per class.
    pub class_means: Vec<Vec<f64>>,
    pub class_stddev: f64,
    pub dataset_size: usize,
    pub seed: u64,
    /// Optional per-feature multipliers applied after sampling; unequal
    /// scales make the loss ill-conditioned.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_scales: Option<Vec<f64>>,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dimension == 0 {
            return Err(invalid("dataset dimension must be positive"));
        }
        if self.class_means.len() != 2 {
            return Err(invalid(format!("class_means must hold exactly 2 vectors, got {}", self.class_means.len())));
        }
        for (i, m) in self.class_means.iter().enumerate() {
            if m.len() != self.dimension {
                return Err(invalid(format!("class_means[{i}] has length {}, expected {}", m.len(), self.dimension)));
            }
        }
        if !(self.class_stddev > 0.0) {
            return Err(invalid("class_stddev must be positive"));
        }
        if let Some(scales) = &self.feature_scales {
            if scales.len() != self.dimension {
                return Err(invalid(format!(
                    "feature_scales has length {}, expected {}",
                    scales.len(),
                    self.dimension
                )));
            }
            if scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                return Err(invalid("feature_scales must be positive and finite"));
            }
        }
        if self.dataset_size < 2 {
            return Err(invalid("dataset_size must be at least 2"));
        }
        Ok(())
    }
}

/// Materialized dataset. Labels alternate 0, 1, 0, ... so the classes are
/// balanced; features are regenerated bit-exactly from the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<f64>,
}

impl SyntheticDataset {
    pub fn generate(spec: &DatasetSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng_stream(spec.seed, 0);
        let dim = spec.dimension;
        let mut features = Vec::with_capacity(spec.dataset_size * dim);
        let mut labels = Vec::with_capacity(spec.dataset_size);
        for i in 0..spec.dataset_size {
            let label = i % 2;
            for (j, m) in spec.class_means[label].iter().enumerate() {
                let scale = spec.feature_scales.as_ref().map_or(1.0, |s| s[j]);
                features.push(scale * (m + spec.class_stddev * rng.sample::<f64, _>(StandardNormal)));
            }
            labels.push(label as f64);
        }
        Ok(Self { dim, features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub(crate) fn sample(&self, rng: &mut RngStream, batch_size: usize) -> Result<ExampleBatch> {
        check_batch_size(batch_size)?;
        let n = self.len();
        Ok(ExampleBatch::Indices((0..batch_size).map(|_| rng.random_range(0..n)).collect()))
    }

    pub(crate) fn stratified(&self, rng: &mut RngStream, batch_size: usize, count: usize) -> Result<Vec<ExampleBatch>> {
        check_batch_size(batch_size)?;
        let n = self.len();
        let uniforms = latin_hypercube(rng, count, batch_size);
        Ok(uniforms
            .chunks(batch_size)
            .map(|row| ExampleBatch::Indices(row.iter().map(|u| ((u * n as f64) as usize).min(n - 1)).collect()))
            .collect())
    }

    pub(crate) fn indices_of<'a>(&self, batch: &'a ExampleBatch) -> Result<&'a [usize]> {
        match batch {
            ExampleBatch::Indices(idx) if !idx.is_empty() => {
                if let Some(bad) = idx.iter().find(|i| **i >= self.len()) {
                    return Err(invalid(format!("example index {bad} out of range")));
                }
                Ok(idx)
            }
            _ => Err(invalid("batch does not hold dataset indices")),
        }
    }
}

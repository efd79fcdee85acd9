use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Flat parameter (or gradient) vector θ ∈ R^D.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `self += alpha * x`
    pub fn axpy(&mut self, alpha: f64, x: &Self) {
        debug_assert_eq!(self.len(), x.len());
        for (a, b) in self.0.iter_mut().zip(&x.0) {
            *a += alpha * b;
        }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self(self.0.iter().map(|v| alpha * v).collect())
    }

    pub fn scale_mut(&mut self, alpha: f64) {
        self.0.iter_mut().for_each(|v| *v *= alpha);
    }

    /// `self - alpha * x` as a new vector.
    pub fn offset(&self, alpha: f64, x: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-alpha, x);
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub(crate) fn check_dim(&self, expected: usize) -> Result<()> {
        if self.len() != expected {
            return Err(invalid(format!("parameter length {} does not match task dimension {}", self.len(), expected)));
        }
        Ok(())
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

impl FromIterator<f64> for ParamVector {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

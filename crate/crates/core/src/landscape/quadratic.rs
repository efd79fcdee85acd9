use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{check_batch_size, latin_hypercube, rng_stream, Evaluation, ExampleBatch, ParamVector, RngStream, Task};
use crate::error::{invalid, Error, Result};

/// Quadratic landscape with per-example losses `½(θ − c)ᵀH(θ − c)`, where the
/// shifts `c` are mean-zero Gaussian with covariance Σ_c.
///
/// H and Σ_c are diagonal in a shared eigenbasis, so every trace used by the
/// noise-scale oracles is an O(D) sum.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticTask {
    hessian: Vec<f64>,
    shift_cov: Vec<f64>,
    shift_std: Vec<f64>,
    initial: ParamVector,
    seed: u64,
}

/// Exact noise scales at a point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticNoiseScales {
    pub b_simple: f64,
    pub b_noise: f64,
}

impl QuadraticTask {
    /// Task starting from `initial_scale · z`, `z ~ N(0, I)` drawn from `seed`.
    pub fn new(
        hessian_eigenvalues: Vec<f64>,
        shift_covariance_eigenvalues: Vec<f64>,
        initial_scale: f64,
        seed: u64,
    ) -> Result<Self> {
        let dim = hessian_eigenvalues.len();
        let mut rng = rng_stream(seed, u64::MAX);
        let initial = (0..dim).map(|_| initial_scale * rng.sample::<f64, _>(StandardNormal)).collect();
        Self::with_initial(hessian_eigenvalues, shift_covariance_eigenvalues, initial, seed)
    }

    pub fn with_initial(
        hessian_eigenvalues: Vec<f64>,
        shift_covariance_eigenvalues: Vec<f64>,
        initial: ParamVector,
        seed: u64,
    ) -> Result<Self> {
        let dim = hessian_eigenvalues.len();
        if dim == 0 {
            return Err(invalid("quadratic task needs at least one dimension"));
        }
        if shift_covariance_eigenvalues.len() != dim {
            return Err(invalid(format!(
                "shift covariance has {} eigenvalues, Hessian has {}",
                shift_covariance_eigenvalues.len(),
                dim
            )));
        }
        if let Some(h) = hessian_eigenvalues.iter().find(|h| !(**h > 0.0 && h.is_finite())) {
            return Err(invalid(format!("Hessian eigenvalues must be positive, got {h}")));
        }
        if let Some(s) = shift_covariance_eigenvalues.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
            return Err(invalid(format!("shift covariance eigenvalues must be non-negative, got {s}")));
        }
        initial.check_dim(dim)?;
        let shift_std = shift_covariance_eigenvalues.iter().map(|s| s.sqrt()).collect();
        Ok(Self { hessian: hessian_eigenvalues, shift_cov: shift_covariance_eigenvalues, shift_std, initial, seed })
    }

    pub fn hessian(&self) -> &[f64] {
        &self.hessian
    }

    pub fn shift_covariance(&self) -> &[f64] {
        &self.shift_cov
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Spectrum of Σ = H Σ_c H.
    pub fn gradient_covariance(&self) -> Vec<f64> {
        self.hessian.iter().zip(&self.shift_cov).map(|(h, s)| h * h * s).collect()
    }

    /// Exact G = Hθ.
    pub fn gradient(&self, params: &ParamVector) -> ParamVector {
        params.iter().zip(&self.hessian).map(|(t, h)| h * t).collect()
    }

    /// ½ tr(H Σ_c), the loss at the minimum.
    pub fn loss_floor(&self) -> f64 {
        0.5 * self.hessian.iter().zip(&self.shift_cov).map(|(h, s)| h * s).sum::<f64>()
    }

    /// `(|G|², GᵀHG, tr Σ, tr HΣ)` at `params`.
    pub fn curvature_terms(&self, params: &ParamVector) -> Result<(f64, f64, f64, f64)> {
        params.check_dim(self.hessian.len())?;
        let mut gsq = 0.0;
        let mut gthg = 0.0;
        let mut tr_sigma = 0.0;
        let mut tr_hsigma = 0.0;
        for ((t, h), s) in params.iter().zip(&self.hessian).zip(&self.shift_cov) {
            let g = h * t;
            gsq += g * g;
            gthg += h * g * g;
            let sigma = h * h * s;
            tr_sigma += sigma;
            tr_hsigma += h * sigma;
        }
        Ok((gsq, gthg, tr_sigma, tr_hsigma))
    }

    /// B_simple = tr Σ / |G|² and B_noise = tr(HΣ) / GᵀHG.
    pub fn noise_scales(&self, params: &ParamVector) -> Result<AnalyticNoiseScales> {
        let (gsq, gthg, tr_sigma, tr_hsigma) = self.curvature_terms(params)?;
        if gsq == 0.0 {
            return Err(Error::UndefinedAtMinimum);
        }
        Ok(AnalyticNoiseScales { b_simple: tr_sigma / gsq, b_noise: tr_hsigma / gthg })
    }

    fn per_example_loss(&self, params: &[f64], shift: &[f64]) -> f64 {
        0.5 * params.iter().zip(shift).zip(&self.hessian).map(|((t, c), h)| h * (t - c) * (t - c)).sum::<f64>()
    }

    fn shifts_of<'a>(&self, batch: &'a ExampleBatch) -> Result<&'a [f64]> {
        match batch {
            ExampleBatch::Shifts { dim, shifts } if *dim == self.hessian.len() && !shifts.is_empty() => Ok(shifts),
            _ => Err(invalid("batch does not hold shift vectors for this quadratic task")),
        }
    }
}

impl Task for QuadraticTask {
    fn dimension(&self) -> usize {
        self.hessian.len()
    }

    fn describe(&self) -> String {
        format!("quadratic(D={})", self.hessian.len())
    }

    fn initial_params(&self) -> ParamVector {
        self.initial.clone()
    }

    fn sample_batch(&self, rng: &mut RngStream, batch_size: usize) -> Result<ExampleBatch> {
        check_batch_size(batch_size)?;
        let dim = self.hessian.len();
        let mut shifts = Vec::with_capacity(batch_size * dim);
        for _ in 0..batch_size {
            for sd in &self.shift_std {
                shifts.push(sd * rng.sample::<f64, _>(StandardNormal));
            }
        }
        Ok(ExampleBatch::Shifts { dim, shifts })
    }

    fn stratified_batches(&self, rng: &mut RngStream, batch_size: usize, count: usize) -> Result<Vec<ExampleBatch>> {
        check_batch_size(batch_size)?;
        let dim = self.hessian.len();
        let columns = batch_size * dim;
        let uniforms = latin_hypercube(rng, count, columns);
        let normal = Normal::standard();
        Ok(uniforms
            .chunks(columns.max(1))
            .map(|row| {
                let shifts =
                    row.iter().enumerate().map(|(j, u)| self.shift_std[j % dim] * normal.inverse_cdf(*u)).collect();
                ExampleBatch::Shifts { dim, shifts }
            })
            .collect())
    }

    fn batch_loss(&self, params: &ParamVector, batch: &ExampleBatch) -> Result<f64> {
        params.check_dim(self.hessian.len())?;
        let shifts = self.shifts_of(batch)?;
        let dim = self.hessian.len();
        let n = shifts.len() / dim;
        let total: f64 = shifts.chunks(dim).map(|c| self.per_example_loss(params, c)).sum();
        Ok(total / n as f64)
    }

    /// H(θ − c̄) with c̄ the batch-mean shift.
    fn batch_gradient(&self, params: &ParamVector, batch: &ExampleBatch) -> Result<ParamVector> {
        params.check_dim(self.hessian.len())?;
        let shifts = self.shifts_of(batch)?;
        let dim = self.hessian.len();
        let n = (shifts.len() / dim) as f64;
        let mut mean = vec![0.0; dim];
        for c in shifts.chunks(dim) {
            for (m, v) in mean.iter_mut().zip(c) {
                *m += v;
            }
        }
        Ok(params.iter().zip(&mean).zip(&self.hessian).map(|((t, m), h)| h * (t - m / n)).collect())
    }

    fn evaluate(&self, params: &ParamVector) -> Result<Evaluation> {
        let (loss, _) = self.true_loss_and_gradient(params)?;
        Ok(Evaluation { loss, error: None })
    }

    /// L = ½θᵀHθ + ½tr(HΣ_c), G = Hθ.
    fn true_loss_and_gradient(&self, params: &ParamVector) -> Result<(f64, ParamVector)> {
        params.check_dim(self.hessian.len())?;
        let quad: f64 = params.iter().zip(&self.hessian).map(|(t, h)| h * t * t).sum();
        Ok((0.5 * quad + self.loss_floor(), self.gradient(params)))
    }

    fn as_quadratic(&self) -> Option<&QuadraticTask> {
        Some(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn example_task() -> QuadraticTask {
        QuadraticTask::with_initial(vec![1.0, 4.0], vec![1.0, 1.0], vec![1.0, 1.0].into(), 0).unwrap()
    }

    #[test]
    fn gradient_at_zero_mean_shift() {
        let task = example_task();
        let batch = ExampleBatch::Shifts { dim: 2, shifts: vec![0.5, -1.0, -0.5, 1.0] };
        let g = task.batch_gradient(&vec![1.0, 1.0].into(), &batch).unwrap();
        assert_eq!(&g[..], &[1.0, 4.0]);
    }

    #[test]
    fn true_loss_closed_form() {
        let task = example_task();
        let (loss, g) = task.true_loss_and_gradient(&vec![1.0, 1.0].into()).unwrap();
        assert_relative_eq!(loss, 5.0);
        assert_eq!(&g[..], &[1.0, 4.0]);
        let (loss0, g0) = task.true_loss_and_gradient(&ParamVector::zeros(2)).unwrap();
        assert_relative_eq!(loss0, 2.5);
        assert_eq!(g0.norm_sq(), 0.0);
    }

    #[test]
    fn noise_scales_hand_example() {
        let task = example_task();
        let (gsq, gthg, tr_sigma, tr_hsigma) = task.curvature_terms(&vec![1.0, 1.0].into()).unwrap();
        assert_eq!((gsq, gthg, tr_sigma, tr_hsigma), (17.0, 65.0, 17.0, 65.0));
        let ns = task.noise_scales(&vec![1.0, 1.0].into()).unwrap();
        assert_relative_eq!(ns.b_simple, 1.0);
        assert_relative_eq!(ns.b_noise, 1.0);
    }

    #[test]
    fn noise_scales_undefined_at_minimum() {
        let task = example_task();
        assert!(matches!(task.noise_scales(&ParamVector::zeros(2)), Err(Error::UndefinedAtMinimum)));
    }

    #[test]
    fn rejects_bad_spectra() {
        assert!(QuadraticTask::new(vec![1.0, 0.0], vec![1.0, 1.0], 1.0, 0).is_err());
        assert!(QuadraticTask::new(vec![1.0], vec![1.0, 1.0], 1.0, 0).is_err());
        assert!(QuadraticTask::new(vec![1.0], vec![-1.0], 1.0, 0).is_err());
    }

    #[test]
    fn zero_batch_rejected() {
        let task = example_task();
        let mut rng = rng_stream(1, 0);
        assert!(matches!(task.sample_batch(&mut rng, 0), Err(Error::InvalidArgument(_))));
    }
}

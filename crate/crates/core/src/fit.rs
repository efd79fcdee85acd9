//! Damped Gauss-Newton (Levenberg-Marquardt) for the small fits used here:
//! the ΔL(B) curve, the step/example tradeoff and learning-rate rules. All of
//! them have two or three parameters and at most a few dozen points.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Residuals and their Jacobian (one row per residual) at a parameter vector.
pub struct Evaluated {
    pub residuals: Vec<f64>,
    pub jacobian: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub params: Vec<f64>,
    pub residuals: Vec<f64>,
    /// `s²·(JᵀJ)⁻¹` with `s² = RSS/(n − p)`; zero when `n == p`.
    pub covariance: DMatrix<f64>,
    pub iterations: usize,
}

impl LeastSquares {
    pub fn rss(&self) -> f64 {
        self.residuals.iter().map(|r| r * r).sum()
    }

    pub fn rms(&self) -> f64 {
        (self.rss() / self.residuals.len() as f64).sqrt()
    }

    pub fn stderr(&self, i: usize) -> f64 {
        self.covariance[(i, i)].max(0.0).sqrt()
    }
}

const MAX_ITERATIONS: usize = 500;

pub fn levenberg_marquardt<F>(model: F, init: &[f64]) -> Result<LeastSquares>
where
    F: Fn(&[f64]) -> Evaluated,
{
    let p = init.len();
    let mut params = init.to_vec();
    let mut current = model(&params);
    let n = current.residuals.len();
    if n < p {
        return Err(Error::InsufficientData(format!("{n} residuals for {p} parameters")));
    }
    let mut cost = half_sq(&current.residuals);
    if !cost.is_finite() {
        return Err(Error::IllConditionedFit("non-finite residuals at the initial guess".into()));
    }
    let mut lambda = 1e-3;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (a, g) = normal_equations(&current);
        let max_diag = (0..p).map(|i| a[(i, i)]).fold(0.0, f64::max);
        if max_diag == 0.0 {
            return Err(Error::IllConditionedFit("zero Jacobian".into()));
        }
        if g.amax() <= 1e-15 * max_diag.sqrt() * (2.0 * cost).sqrt().max(1e-300) {
            break;
        }
        let mut accepted = false;
        while lambda < 1e16 {
            let mut damped = a.clone();
            for i in 0..p {
                damped[(i, i)] += lambda * a[(i, i)].max(1e-12 * max_diag);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-&g))) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = params.iter().zip(step.iter()).map(|(x, d)| x + d).collect();
            let evaluated = model(&trial);
            let trial_cost = half_sq(&evaluated.residuals);
            if trial_cost.is_finite() && trial_cost <= cost {
                let step_small = step.iter().zip(&params).all(|(d, x)| d.abs() <= 1e-13 * (x.abs() + 1e-13));
                let decrease = cost - trial_cost;
                params = trial;
                current = evaluated;
                cost = trial_cost;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if step_small || decrease <= 1e-30 + 1e-16 * cost {
                    iterations = MAX_ITERATIONS;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            break;
        }
    }

    let (a, _) = normal_equations(&current);
    let inverse = a
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::IllConditionedFit("singular normal matrix at the optimum".into()))?;
    if inverse.iter().any(|v| !v.is_finite()) {
        return Err(Error::IllConditionedFit("singular normal matrix at the optimum".into()));
    }
    let dof = n - p;
    let s2 = if dof > 0 { 2.0 * cost / dof as f64 } else { 0.0 };
    Ok(LeastSquares { params, residuals: current.residuals, covariance: inverse * s2, iterations })
}

fn half_sq(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

fn normal_equations(e: &Evaluated) -> (DMatrix<f64>, DVector<f64>) {
    let n = e.residuals.len();
    let p = e.jacobian.first().map_or(0, Vec::len);
    let j = DMatrix::from_fn(n, p, |r, c| e.jacobian[r][c]);
    let r = DVector::from_column_slice(&e.residuals);
    (j.transpose() * &j, j.transpose() * r)
}

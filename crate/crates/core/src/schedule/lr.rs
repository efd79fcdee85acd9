use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fit::{levenberg_marquardt, Evaluated};

/// `ε(B) = ε* / (1 + B*/B)^α`.
///
/// α = 1 is the SGD/momentum form (linear growth in B below B*, saturation
/// above); α ∈ (0.5, 1) is typical for Adam.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrScalingRule {
    pub epsilon_star: f64,
    pub b_star: f64,
    #[serde(default = "LrScalingRule::default_alpha")]
    pub alpha: f64,
}

impl LrScalingRule {
    fn default_alpha() -> f64 {
        1.0
    }

    pub fn new(epsilon_star: f64, b_star: f64, alpha: f64) -> Result<Self> {
        let rule = Self { epsilon_star, b_star, alpha };
        rule.validate()?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_star > 0.0) {
            return Err(invalid("epsilon_star must be positive"));
        }
        if !(self.b_star > 0.0) {
            return Err(invalid("b_star must be positive"));
        }
        if !(0.5..=1.0).contains(&self.alpha) {
            return Err(invalid(format!("alpha must lie in [0.5, 1], got {}", self.alpha)));
        }
        Ok(())
    }
}

pub fn central_lr(rule: &LrScalingRule, batch_size: usize) -> Result<f64> {
    if batch_size == 0 {
        return Err(invalid("batch size must be at least 1"));
    }
    Ok(rule.epsilon_star / (1.0 + rule.b_star / batch_size as f64).powf(rule.alpha))
}

/// Log-space fit of the rule to `(B, ε)` pairs. With `alpha = Some(a)` the
/// exponent is held fixed; otherwise it is fitted too (and may leave
/// [0.5, 1], which is reported rather than clamped).
pub fn fit_lr_rule(points: &[(usize, f64)], alpha: Option<f64>) -> Result<LrScalingRule> {
    let n_params = if alpha.is_some() { 2 } else { 3 };
    if points.len() < n_params + 1 {
        return Err(Error::InsufficientData(format!("learning-rate rule fit needs at least {} points", n_params + 1)));
    }
    if points.iter().any(|(b, e)| *b == 0 || !(*e > 0.0)) {
        return Err(invalid("learning-rate points need positive batch sizes and rates"));
    }
    let bs: Vec<f64> = points.iter().map(|(b, _)| *b as f64).collect();
    let ys: Vec<f64> = points.iter().map(|(_, e)| e.ln()).collect();
    let e_max = points.iter().map(|p| p.1).fold(f64::MIN, f64::max);
    let mut sorted = bs.clone();
    sorted.sort_by(f64::total_cmp);
    let b_mid = sorted[sorted.len() / 2];
    let mut init = vec![e_max.ln(), b_mid.ln()];
    if alpha.is_none() {
        init.push(1.0);
    }
    let fit = levenberg_marquardt(
        |p| {
            let a = alpha.unwrap_or_else(|| p[2]);
            let b_star = p[1].exp();
            let mut residuals = Vec::with_capacity(bs.len());
            let mut jacobian = Vec::with_capacity(bs.len());
            for (b, y) in bs.iter().zip(&ys) {
                let x = b_star / b;
                let log_term = (1.0 + x).ln();
                residuals.push(p[0] - a * log_term - y);
                let mut row = vec![1.0, -a * x / (1.0 + x)];
                if alpha.is_none() {
                    row.push(-log_term);
                }
                jacobian.push(row);
            }
            Evaluated { residuals, jacobian }
        },
        &init,
    )?;
    Ok(LrScalingRule {
        epsilon_star: fit.params[0].exp(),
        b_star: fit.params[1].exp(),
        alpha: alpha.unwrap_or(fit.params.get(2).copied().unwrap_or(1.0)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn half_point_and_limit() {
        let rule = LrScalingRule::new(0.4, 32.0, 1.0).unwrap();
        assert_relative_eq!(central_lr(&rule, 32).unwrap(), 0.2);
        assert_relative_eq!(central_lr(&rule, usize::MAX).unwrap(), 0.4, max_relative = 1e-12);
    }

    #[test]
    fn fixed_batch_svhn_rule() {
        // ε = 0.27·B/(96 + B)
        let rule = LrScalingRule::new(0.27, 96.0, 1.0).unwrap();
        assert_relative_eq!(central_lr(&rule, 96).unwrap(), 0.135, epsilon = 1e-15);
    }

    #[test]
    fn fit_recovers_rule() {
        let truth = LrScalingRule::new(0.8, 40.0, 0.7).unwrap();
        let pts: Vec<(usize, f64)> =
            [1, 4, 16, 64, 256, 1024].iter().map(|&b| (b, central_lr(&truth, b).unwrap())).collect();
        let free = fit_lr_rule(&pts, None).unwrap();
        assert_relative_eq!(free.epsilon_star, 0.8, max_relative = 1e-8);
        assert_relative_eq!(free.b_star, 40.0, max_relative = 1e-8);
        assert_relative_eq!(free.alpha, 0.7, max_relative = 1e-8);
    }

    #[test]
    fn invalid_alpha_rejected() {
        assert!(LrScalingRule::new(0.1, 10.0, 0.4).is_err());
    }
}

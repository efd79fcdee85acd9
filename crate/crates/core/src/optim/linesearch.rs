use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::landscape::{ParamVector, Task};

/// Geometric step grid: `per_decade` points per decade over `decades`
/// decades below a bracketed upper step, then one refinement pass of
/// `refine_points` between the neighbours of the coarse minimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepGrid {
    pub decades: u32,
    pub per_decade: u32,
    pub refine_points: u32,
}

impl Default for StepGrid {
    fn default() -> Self {
        Self { decades: 4, per_decade: 32, refine_points: 32 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSearchOutcome {
    pub step: f64,
    pub delta_l: f64,
}

impl LineSearchOutcome {
    pub const NONE: Self = Self { step: 0.0, delta_l: 0.0 };
}

const MAX_BRACKET_ITERS: usize = 64;

/// Minimizes `objective(s)` over `s ≥ 0`, where `objective(0)` is the
/// reference loss. `initial_step` only seeds the bracketing.
///
/// The upper end of the grid is the first step (found by doubling or
/// halving from `initial_step`) at which the objective is no longer below
/// the reference. If no probed step improves on the reference, the outcome
/// is `(0, 0)`.
pub fn search_objective<F>(mut objective: F, initial_step: f64, grid: &StepGrid) -> Result<LineSearchOutcome>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(initial_step > 0.0 && initial_step.is_finite()) {
        return Err(invalid("initial step must be positive and finite"));
    }
    let base = objective(0.0)?;
    let mut s = initial_step;
    let upper = if objective(s)? < base {
        let mut found = s;
        for _ in 0..MAX_BRACKET_ITERS {
            s *= 2.0;
            found = s;
            let v = objective(s)?;
            if !(v < base) {
                break;
            }
        }
        found
    } else {
        let mut found = None;
        for _ in 0..MAX_BRACKET_ITERS {
            s *= 0.5;
            if objective(s)? < base {
                found = Some(2.0 * s);
                break;
            }
        }
        match found {
            Some(u) => u,
            None => return Ok(LineSearchOutcome::NONE),
        }
    };

    let total = (grid.decades * grid.per_decade) as i32;
    let per_decade = grid.per_decade.max(1) as f64;
    let coarse: Vec<f64> = (0..=total).map(|k| upper * 10f64.powf((k - total) as f64 / per_decade)).collect();
    let mut best = (0.0, base);
    let mut best_k = None;
    for (k, &step) in coarse.iter().enumerate() {
        let v = objective(step)?;
        if v < best.1 {
            best = (step, v);
            best_k = Some(k);
        }
    }
    let Some(k) = best_k else {
        return Ok(LineSearchOutcome::NONE);
    };
    let lo = if k > 0 { coarse[k - 1] } else { coarse[0] / 10f64.powf(1.0 / per_decade) };
    let hi = if k + 1 < coarse.len() { coarse[k + 1] } else { coarse[k] * 10f64.powf(1.0 / per_decade) };
    let n = grid.refine_points.max(2);
    for i in 0..=n {
        let step = lo * (hi / lo).powf(i as f64 / n as f64);
        let v = objective(step)?;
        if v < best.1 {
            best = (step, v);
        }
    }
    let delta_l = base - best.1;
    if delta_l <= 0.0 {
        return Ok(LineSearchOutcome::NONE);
    }
    Ok(LineSearchOutcome { step: best.0, delta_l })
}

/// Full-batch line search of `L(θ − s·direction)`.
pub fn line_search(
    task: &dyn Task,
    params: &ParamVector,
    direction: &ParamVector,
    grid: &StepGrid,
) -> Result<LineSearchOutcome> {
    params.check_dim(task.dimension())?;
    direction.check_dim(task.dimension())?;
    let norm = direction.norm();
    if norm == 0.0 {
        return Err(invalid("line search direction must be nonzero"));
    }
    search_objective(|s| task.true_loss(&params.offset(s, direction)), 1.0 / norm, grid)
}

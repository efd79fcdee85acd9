use crate::error::{invalid, Result};
use crate::landscape::ParamVector;

/// Mean of the worker gradients, summed by a pairwise tree in worker-index
/// order: the range is split at `len / 2` (left half rounded down) and the
/// halves are summed recursively. The order depends only on the number of
/// workers, never on how the work was scheduled.
pub fn all_reduce_mean(worker_gradients: &[ParamVector]) -> Result<ParamVector> {
    let first = worker_gradients.first().ok_or_else(|| invalid("all-reduce needs at least one worker gradient"))?;
    if worker_gradients.iter().any(|g| g.len() != first.len()) {
        return Err(invalid("worker gradients have mismatched dimensions"));
    }
    let n = worker_gradients.len() as f64;
    let mut total = tree_sum(worker_gradients);
    total.iter_mut().for_each(|v| *v /= n);
    Ok(total)
}

fn tree_sum(parts: &[ParamVector]) -> ParamVector {
    match parts.len() {
        1 => parts[0].clone(),
        n => {
            let (left, right) = parts.split_at(n / 2);
            let mut sum = tree_sum(left);
            sum.axpy(1.0, &tree_sum(right));
            sum
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn opposite_gradients_cancel() {
        let g: ParamVector = vec![0.1, -3.0, 7.5].into();
        let mean = all_reduce_mean(&[g.clone(), g.scaled(-1.0)]).unwrap();
        assert!(mean.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identical_gradients_are_returned() {
        let g: ParamVector = vec![0.25, -1.5].into();
        let mean = all_reduce_mean(&vec![g.clone(); 4]).unwrap();
        assert_eq!(mean, g);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(all_reduce_mean(&[]).is_err());
    }

    #[test]
    fn four_workers_follow_fixed_tree() {
        let gs: Vec<ParamVector> = [0.1, 0.2, 0.3, 1e16].iter().map(|v| vec![*v, -*v / 3.0].into()).collect();
        let mean = all_reduce_mean(&gs).unwrap();
        for d in 0..2 {
            let expected = ((gs[0][d] + gs[1][d]) + (gs[2][d] + gs[3][d])) / 4.0;
            assert_eq!(mean[d].to_bits(), expected.to_bits());
        }
    }
}

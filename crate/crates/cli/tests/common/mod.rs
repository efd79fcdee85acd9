#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use gradnoise_cli::registry::list_files;

/// Three-eigenvalue quadratic (h_max = 1, loss floor 0.7), B ∈ {1, 4, 16},
/// five learning rates per B, two goals.
pub const QUADRATIC: &str = r#"
batch_sizes = [1, 4, 16]
max_steps = 2000
seeds = [1]

[task]
kind = "quadratic"
hessian_eigenvalues = [0.1, 0.3, 1.0]
shift_covariance_eigenvalues = [1.0, 1.0, 1.0]
initial = [3.0, 3.0, 3.0]

[lr_rule]
epsilon_star = 1.0
b_star = 4.0
alpha = 1.0

[lr_grid]
span_decades = 1.0
points_per_decade = 2
max_expansions = 0

[[goals]]
metric = "train_loss"
threshold = 2.0

[[goals]]
metric = "train_loss"
threshold = 1.0
"#;

/// Same task with the top learning rate of every column beyond 2/h_max.
pub fn with_diverging_column() -> String {
    QUADRATIC.replace("hessian_eigenvalues = [0.1, 0.3, 1.0]", "hessian_eigenvalues = [0.1, 0.3, 1.5]")
}

/// Every learning rate tried is unstable.
pub fn all_diverging() -> String {
    QUADRATIC.replace("epsilon_star = 1.0", "epsilon_star = 1000.0")
}

pub fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    list_files(root)
        .unwrap()
        .into_iter()
        .map(|rel| {
            let bytes = fs::read(root.join(&rel)).unwrap();
            (rel, bytes)
        })
        .collect()
}

mod common;

use gradnoise::optim::OptimizerKind;
use gradnoise_cli::{parse_config, CliError};

const MINIMAL: &str = r#"
batch_sizes = [4]

[task]
kind = "quadratic"
hessian_eigenvalues = [1.0, 4.0]
shift_covariance_eigenvalues = [1.0, 1.0]

[lr_rule]
epsilon_star = 0.5
b_star = 10.0

[[goals]]
metric = "train_loss"
threshold = 0.1
"#;

fn config_error(text: &str) -> String {
    match parse_config(text) {
        Err(CliError::Config(msg)) => msg,
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn minimal_config_gets_defaults() {
    let c = parse_config(MINIMAL).unwrap();
    assert_eq!(c.tracker.decay_gsq, 0.99);
    assert_eq!(c.tracker.decay_trsigma, 0.99);
    assert_eq!(c.tracker.warmup, 100);
    assert_eq!(c.lr_grid.points_per_decade, 4);
    assert_eq!(c.lr_grid.span_decades, 1.0);
    assert_eq!(c.lr_grid.max_expansions, 3);
    assert_eq!(c.lr_rule.alpha, 1.0);
    assert_eq!(c.goals[0].smoothing_decay, 0.95);
    assert_eq!(c.seeds, vec![0]);
    assert_eq!(c.layout.max_workers, 8);
    assert_eq!(c.optimizer.kind, OptimizerKind::Sgd);
    assert_eq!(c.max_steps, 10_000);
    assert!(c.out_dir.is_none() && c.adaptive.is_none() && c.temperature.is_none());
}

#[test]
fn zero_batch_size_is_rejected_by_index() {
    let msg = config_error(&MINIMAL.replace("batch_sizes = [4]", "batch_sizes = [4, 16, 0]"));
    assert!(msg.contains("batch_sizes[2]"), "{msg}");
}

#[test]
fn serialized_config_reparses_equal() {
    let full = format!(
        "out_dir = \"results\"\n{}{}",
        common::QUADRATIC,
        r#"
[adaptive]
exchange_rate = 12.5
reestimate_interval = 10

[temperature]
batch_size = 8
learning_rate = 0.1
lr_factor = 0.0625
window_start = 1000
window_end = 2000
steps = 3000

[diagnose]
batch_size = 64
learning_rate = 1.5
steps = 400
"#
    );
    for text in [MINIMAL, common::QUADRATIC, &full] {
        let c = parse_config(text).unwrap();
        let again = parse_config(&c.to_toml()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.hash(), c.hash());
    }
    let c = parse_config(&full).unwrap();
    assert_eq!(c.adaptive.unwrap().exchange_rate, Some(12.5));
    assert_eq!(c.out_dir.as_deref(), Some(std::path::Path::new("results")));
}

#[test]
fn unknown_keys_are_rejected_with_their_path() {
    let msg = config_error(&MINIMAL.replace("b_star = 10.0", "b_star = 10.0\nbstar = 3.0"));
    assert!(msg.starts_with("lr_rule.bstar"), "{msg}");
    let msg = config_error(&format!("colour = 1\n{MINIMAL}"));
    assert!(msg.contains("colour"), "{msg}");
    let msg = config_error(&MINIMAL.replace("threshold = 0.1", "threshold = \"low\""));
    assert!(msg.starts_with("goals[0].threshold"), "{msg}");
}

#[test]
fn semantic_violations_name_their_section() {
    let msg = config_error(&MINIMAL.replace("epsilon_star = 0.5", "epsilon_star = -0.5"));
    assert!(msg.starts_with("lr_rule"), "{msg}");
    let window = format!(
        "{MINIMAL}\n[temperature]\nbatch_size = 8\nlearning_rate = 0.1\nlr_factor = 0.5\nwindow_start = 500\nwindow_end = 400\nsteps = 1000\n"
    );
    assert!(config_error(&window).starts_with("temperature"));
    let no_goals =
        MINIMAL.split("[[goals]]").next().unwrap().replace("batch_sizes = [4]", "batch_sizes = [4]\ngoals = []");
    assert!(config_error(&no_goals).starts_with("goals"));
}

#[test]
fn hash_tracks_every_field() {
    let a = parse_config(MINIMAL).unwrap();
    let mut b = a.clone();
    assert_eq!(a.hash(), b.hash());
    b.seeds = vec![1];
    assert_ne!(a.hash(), b.hash());
    assert_eq!(a.hash().len(), 64);
}

#[test]
fn hardest_goal_has_the_lowest_threshold() {
    let c = parse_config(common::QUADRATIC).unwrap();
    assert_eq!(c.hardest_goal().threshold, 1.0);
    let s = c.trial_settings();
    assert_eq!(s.goal.threshold, 1.0);
    assert_eq!(s.seeds, vec![1]);
}

#[test]
fn shipped_example_config_parses() {
    let c = parse_config(include_str!("../../../configs/quadratic.toml")).unwrap();
    assert_eq!(c.batch_sizes, vec![1, 4, 16, 64, 256]);
    assert_eq!(c.goals.len(), 2);
    assert!(c.adaptive.is_some() && c.temperature.is_some() && c.diagnose.is_some() && c.delta_l.is_some());
}

use approx::assert_relative_eq;
use gradnoise::landscape::*;
use gradnoise::optim::*;
use gradnoise::Error;
use proptest::prelude::*;

fn toy() -> QuadraticTask {
    QuadraticTask::with_initial(vec![1.0, 4.0], vec![1.0, 1.0], ParamVector::new(vec![1.0, 1.0]), 0).unwrap()
}

#[test]
fn optimal_step_hand_example() {
    let o = optimal_step_and_improvement(17.0, 65.0, 65.0, 1).unwrap();
    assert_relative_eq!(o.b_noise, 1.0);
    assert_relative_eq!(o.epsilon_max, 17.0 / 65.0);
    assert_relative_eq!(o.epsilon_opt, o.epsilon_max / 2.0);
    assert_relative_eq!(o.delta_l_max, 289.0 / 130.0);
    assert!((o.delta_l_max - 2.2231).abs() < 1e-4);
    assert_relative_eq!(o.delta_l_opt, o.delta_l_max / 2.0);
}

#[test]
fn noiseless_step_is_maximal() {
    for b in [1, 7, 1000] {
        let o = optimal_step_and_improvement(3.0, 2.0, 0.0, b).unwrap();
        assert_eq!((o.epsilon_opt, o.delta_l_opt), (o.epsilon_max, o.delta_l_max));
    }
}

#[test]
fn batch_at_noise_scale_halves_everything() {
    let o = optimal_step_and_improvement(5.0, 2.0, 64.0, 32).unwrap();
    assert_eq!(o.b_noise, 32.0);
    assert_eq!(o.epsilon_opt, o.epsilon_max / 2.0);
    assert_eq!(o.delta_l_opt, o.delta_l_max / 2.0);
}

#[test]
fn non_positive_curvature_is_an_error() {
    assert!(matches!(optimal_step_and_improvement(1.0, 0.0, 1.0, 4), Err(Error::NegativeCurvature(_))));
    assert!(matches!(optimal_step_and_improvement(1.0, -2.0, 1.0, 4), Err(Error::NegativeCurvature(_))));
}

proptest! {
    #[test]
    fn optimal_step_shape(gsq in 1e-3f64..1e3, gthg in 1e-3f64..1e3, trhs in 0.0f64..1e3, b in 1usize..10_000) {
        let o = optimal_step_and_improvement(gsq, gthg, trhs, b).unwrap();
        let next = optimal_step_and_improvement(gsq, gthg, trhs, b + 1).unwrap();
        prop_assert!(o.epsilon_opt <= o.epsilon_max);
        prop_assert!(next.epsilon_opt >= o.epsilon_opt);
        let r1 = o.delta_l_opt / o.delta_l_max;
        let r2 = o.epsilon_opt / o.epsilon_max;
        prop_assert!((r1 - r2).abs() < 1e-12);
    }
}

#[test]
fn expected_one_step_loss_monte_carlo() {
    let task = toy();
    let theta = task.initial_params();
    let (gsq, gthg, _, trhs) = task.curvature_terms(&theta).unwrap();
    let b = 4;
    let o = optimal_step_and_improvement(gsq, gthg, trhs, b).unwrap();
    let loss = task.true_loss(&theta).unwrap();
    let expected = expected_loss_after_step(loss, gsq, gthg, trhs, o.epsilon_opt, b);
    assert_relative_eq!(loss - expected, o.delta_l_opt, max_relative = 1e-12);

    let mut rng = rng_stream(3, 0);
    let n = 50_000;
    let samples: Vec<f64> = (0..n)
        .map(|_| {
            let batch = task.sample_batch(&mut rng, b).unwrap();
            let g = task.batch_gradient(&theta, &batch).unwrap();
            task.true_loss(&theta.offset(o.epsilon_opt, &g)).unwrap()
        })
        .collect();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert!((mean - expected).abs() < 3.0 * (var / n as f64).sqrt(), "{mean} vs {expected}");
}

#[test]
fn line_search_along_true_gradient() {
    let task = toy();
    let theta = task.initial_params();
    let (_, g) = task.true_loss_and_gradient(&theta).unwrap();
    let grid = StepGrid::default();
    let out = line_search(&task, &theta, &g, &grid).unwrap();
    assert_relative_eq!(out.step, 17.0 / 65.0, max_relative = 0.02);
    assert_relative_eq!(out.delta_l, 289.0 / 130.0, max_relative = 0.02);

    let doubled = line_search(&task, &theta, &g.scaled(2.0), &grid).unwrap();
    assert_relative_eq!(doubled.step, out.step / 2.0, max_relative = 0.02);
    assert_relative_eq!(doubled.delta_l, out.delta_l, max_relative = 1e-3);
}

#[test]
fn line_search_without_descent_returns_zero() {
    let task = QuadraticTask::with_initial(vec![1.0, 4.0], vec![1.0, 1.0], ParamVector::zeros(2), 0).unwrap();
    // At (1, 0) the gradient is (1, 0); moving along ±e₂ only raises the loss.
    let theta = ParamVector::new(vec![1.0, 0.0]);
    for dir in [vec![0.0, 1.0], vec![0.0, -1.0]] {
        let out = line_search(&task, &theta, &ParamVector::new(dir), &StepGrid::default()).unwrap();
        assert_eq!(out, LineSearchOutcome::NONE);
    }
    assert!(line_search(&task, &theta, &ParamVector::zeros(2), &StepGrid::default()).is_err());
}

#[test]
fn delta_l_curve_is_monotone_and_saturates() {
    let task = toy();
    let theta = task.initial_params();
    let bs: Vec<usize> = (0..=8).map(|k| 1 << k).collect();
    let mut rng = rng_stream(8, 0);
    let pts = measure_delta_l_curve(&task, &theta, &bs, 100, &mut rng, &StepGrid::default()).unwrap();
    let dl_max = 289.0 / 130.0;
    for w in pts.windows(2) {
        assert!(w[1].delta_l_opt >= w[0].delta_l_opt * 0.98, "{w:?}");
    }
    let last = pts.last().unwrap();
    assert_relative_eq!(last.delta_l_opt, dl_max / (1.0 + 1.0 / 256.0), max_relative = 0.02);
}

#[test]
fn noiseless_delta_l_curve_is_flat() {
    let task =
        QuadraticTask::with_initial(vec![1.0, 4.0], vec![0.0, 0.0], ParamVector::new(vec![1.0, 1.0]), 0).unwrap();
    let mut rng = rng_stream(8, 0);
    let pts =
        measure_delta_l_curve(&task, &task.initial_params(), &[1, 4, 16], 3, &mut rng, &StepGrid::default()).unwrap();
    for p in &pts {
        assert_relative_eq!(p.delta_l_opt, 289.0 / 130.0, max_relative = 1e-3);
    }
    assert!(matches!(fit_noise_curve(&pts), Err(Error::IllConditionedFit(_))));
}

#[test]
fn noise_curve_fit_recovers_parameters() {
    let (dl_max, b_noise) = (2.2231, 1.0);
    let pts: Vec<DeltaLPoint> = [1usize, 2, 4, 8, 16, 64, 256]
        .iter()
        .map(|&b| DeltaLPoint { batch_size: b, delta_l_opt: dl_max / (1.0 + b_noise / b as f64) })
        .collect();
    let fit = fit_noise_curve(&pts).unwrap();
    assert_relative_eq!(fit.delta_l_max, dl_max, max_relative = 5e-5);
    assert_relative_eq!(fit.b_noise_fit, b_noise, max_relative = 5e-5);
    assert!(fit.residual < 1e-10);
    assert_eq!(fit.dropped, 0);
}

#[test]
fn noise_curve_fit_drops_failed_searches() {
    let mut pts: Vec<DeltaLPoint> = [1usize, 4, 16, 64]
        .iter()
        .map(|&b| DeltaLPoint { batch_size: b, delta_l_opt: 1.0 / (1.0 + 8.0 / b as f64) })
        .collect();
    pts.push(DeltaLPoint { batch_size: 2, delta_l_opt: 0.0 });
    let fit = fit_noise_curve(&pts).unwrap();
    assert_eq!(fit.dropped, 1);
    assert_relative_eq!(fit.b_noise_fit, 8.0, max_relative = 1e-6);
    assert!(matches!(fit_noise_curve(&pts[..2]), Err(Error::InsufficientData(_))));
}

#[test]
fn optimality_ratio_of_scaled_optimal_step() {
    let task = toy();
    let theta = task.initial_params();
    let (_, g) = task.true_loss_and_gradient(&theta).unwrap();
    let optimal = g.scaled(-17.0 / 65.0);
    let grid = StepGrid::default();
    assert_relative_eq!(update_optimality_ratio(&task, &theta, &optimal, &grid).unwrap(), 1.0, max_relative = 0.01);
    assert_relative_eq!(
        update_optimality_ratio(&task, &theta, &optimal.scaled(2.0), &grid).unwrap(),
        0.5,
        max_relative = 0.01
    );
}

#[test]
fn autocorrelation_of_simple_series() {
    let g = ParamVector::new(vec![1.0, -2.0]);
    let constant = vec![g.clone(); 10];
    for lc in gradient_autocorrelation(&constant, 0.5, 3).unwrap() {
        assert_relative_eq!(lc.correlation, 1.0, epsilon = 1e-12);
    }
    let alternating: Vec<ParamVector> = (0..10).map(|t| g.scaled(if t % 2 == 0 { 1.0 } else { -1.0 })).collect();
    let lags = gradient_autocorrelation(&alternating, 0.0, 3).unwrap();
    for lc in lags {
        assert_relative_eq!(lc.correlation, if lc.lag % 2 == 0 { 1.0 } else { -1.0 }, epsilon = 1e-12);
    }
    assert!(gradient_autocorrelation(&constant[..3], 0.5, 3).is_err());
}

#[test]
fn near_divergent_sgd_oscillates() {
    let task =
        QuadraticTask::with_initial(vec![0.05, 1.0], vec![0.0, 0.0], ParamVector::new(vec![1.0, 1.0]), 0).unwrap();
    let mut opt = Optimizer::new(OptimizerConfig::sgd(1.9), 2).unwrap();
    let mut params = task.initial_params();
    let mut series = Vec::new();
    for _ in 0..60 {
        let (_, g) = task.true_loss_and_gradient(&params).unwrap();
        opt.step(&g, &mut params).unwrap();
        series.push(g);
    }
    let lags = gradient_autocorrelation(&series, 0.5, 2).unwrap();
    assert!(lags[0].correlation < 0.0, "{lags:?}");
}

use gradnoise::gradstats::*;
use gradnoise::landscape::*;
use proptest::prelude::*;

/// Local and global squared norms of a `workers × local` split of one batch.
fn quadratic_pair(
    task: &QuadraticTask,
    theta: &ParamVector,
    rng: &mut RngStream,
    local: usize,
    workers: usize,
) -> NormPair {
    let mut local_sq = 0.0;
    let mut sum = ParamVector::zeros(task.dimension());
    for _ in 0..workers {
        let batch = task.sample_batch(rng, local).unwrap();
        let g = task.batch_gradient(theta, &batch).unwrap();
        local_sq += g.norm_sq();
        sum = sum.add(&g);
    }
    let global = sum.scaled(1.0 / workers as f64);
    NormPair::new(local_sq / workers as f64, global.norm_sq(), local, local * workers).unwrap()
}

fn toy() -> QuadraticTask {
    QuadraticTask::with_initial(vec![1.0, 4.0], vec![1.0, 1.0], ParamVector::new(vec![1.0, 1.0]), 0).unwrap()
}

#[test]
fn bessel_identity_on_fixed_vectors() {
    let xs: [[f64; 3]; 5] = [[1.0, 2.0, -1.0], [0.5, -3.0, 2.0], [2.5, 0.0, 1.0], [-1.0, 1.5, 0.5], [0.0, 4.0, -2.0]];
    let n = xs.len();
    let mean: Vec<f64> = (0..3).map(|k| xs.iter().map(|x| x[k]).sum::<f64>() / n as f64).collect();
    let small = xs.iter().map(|x| x.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / n as f64;
    let big = mean.iter().map(|v| v * v).sum::<f64>();
    let m = unbiased_moments(&NormPair::new(small, big, 1, n).unwrap()).unwrap();
    let sample_var: f64 =
        (0..3).map(|k| xs.iter().map(|x| (x[k] - mean[k]).powi(2)).sum::<f64>() / (n - 1) as f64).sum();
    assert!((m.trsigma - sample_var).abs() <= 1e-12 * sample_var);
}

#[test]
fn estimates_are_unbiased_monte_carlo() {
    let task = toy();
    let theta = task.initial_params();
    let mut rng = rng_stream(21, 0);
    let n = 100_000;
    let (mut gsq, mut gsq2, mut tr, mut tr2) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..n {
        let m = unbiased_moments(&quadratic_pair(&task, &theta, &mut rng, 2, 5)).unwrap();
        gsq += m.gsq;
        gsq2 += m.gsq * m.gsq;
        tr += m.trsigma;
        tr2 += m.trsigma * m.trsigma;
    }
    let nf = n as f64;
    let (mg, mt) = (gsq / nf, tr / nf);
    let (sg, st) = (((gsq2 / nf - mg * mg) / nf).sqrt(), ((tr2 / nf - mt * mt) / nf).sqrt());
    assert!((mg - 17.0).abs() < 3.0 * sg, "|G|² mean {mg} ± {sg}");
    assert!((mt - 17.0).abs() < 3.0 * st, "trΣ mean {mt} ± {st}");
}

#[test]
fn mean_of_ratios_exceeds_ratio_of_means() {
    let task = toy();
    let theta = task.initial_params();
    let mut rng = rng_stream(5, 0);
    let moments: Vec<Moments> = (0..5_000)
        .map(|_| unbiased_moments(&quadratic_pair(&task, &theta, &mut rng, 1, 4)).unwrap())
        .filter(|m| m.gsq > 0.0)
        .collect();
    let n = moments.len() as f64;
    let mean_ratio = moments.iter().map(|m| m.trsigma / m.gsq).sum::<f64>() / n;
    let ratio_of_means = moments.iter().map(|m| m.trsigma).sum::<f64>() / moments.iter().map(|m| m.gsq).sum::<f64>();
    assert!(mean_ratio > ratio_of_means, "{mean_ratio} vs {ratio_of_means}");
}

#[test]
fn tracker_recovers_analytic_b_simple() {
    let task = toy();
    let theta = task.initial_params();
    let mut rng = rng_stream(1, 0);
    let mut tracker = NoiseScaleTracker::new(TrackerConfig::default()).unwrap();
    let mut last = None;
    for _ in 0..10_000 {
        last = tracker_observe(&mut tracker, &quadratic_pair(&task, &theta, &mut rng, 8, 8)).unwrap();
    }
    let b = last.unwrap();
    assert!((b - 1.0).abs() < 0.05, "tracked {b}");
}

#[test]
fn tracker_suppresses_nonpositive_gsq() {
    let mut tracker = NoiseScaleTracker::new(TrackerConfig { warmup: 1, ..TrackerConfig::default() }).unwrap();
    tracker.observe_moments(Moments { gsq: -1.0, trsigma: 3.0 });
    assert_eq!(tracker.b_simple(), None);
    assert_eq!(tracker.snapshot().observation_count, 1);
}

#[test]
fn invalid_decay_is_rejected() {
    let cfg = TrackerConfig { decay_gsq: 1.0, ..TrackerConfig::default() };
    assert!(NoiseScaleTracker::new(cfg).is_err());
}

proptest! {
    #[test]
    fn moments_round_trip(gsq in 0.0f64..100.0, trsigma in 0.0f64..1e3, b_small in 1usize..64, extra in 1usize..512) {
        let b_big = b_small + extra;
        let pair = NormPair::new(
            expected_sq_norm(gsq, trsigma, b_small).unwrap(),
            expected_sq_norm(gsq, trsigma, b_big).unwrap(),
            b_small,
            b_big,
        ).unwrap();
        let m = unbiased_moments(&pair).unwrap();
        prop_assert!((m.gsq - gsq).abs() <= 1e-9 * (1.0 + gsq + trsigma));
        prop_assert!((m.trsigma - trsigma).abs() <= 1e-9 * (1.0 + trsigma + gsq * b_big as f64));
    }

    #[test]
    fn equal_norms_mean_no_noise(k in 0.0f64..1e4, b_small in 1usize..32, extra in 1usize..32) {
        let m = unbiased_moments(&NormPair::new(k, k, b_small, b_small + extra).unwrap()).unwrap();
        prop_assert_eq!(m.trsigma, 0.0);
        prop_assert!((m.gsq - k).abs() <= 1e-12 * k.max(1.0));
    }
}

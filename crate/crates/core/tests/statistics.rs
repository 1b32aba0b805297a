use cape::positions::{shuffle_by_perturbed_duration, ShuffleSpec};
use cape::{augment_positions_1d, AugmentationConfig, Mode, PositionSet1D, RngStream};

fn mean_spread(batches: &[Vec<usize>], durations: &[f64]) -> f64 {
    let ratios: Vec<f64> = batches
        .iter()
        .map(|b| {
            let (lo, hi) = b.iter().fold((f64::MAX, f64::MIN), |(l, h), &i| (l.min(durations[i]), h.max(durations[i])));
            hi / lo
        })
        .collect();
    ratios.iter().sum::<f64>() / ratios.len() as f64
}

#[test]
fn perturbed_sort_tightens_batches() {
    let mut rng = RngStream::new(2024);
    let durations: Vec<f64> = (0..10_000).map(|_| rng.uniform(1.0, 30.0)).collect();
    let sorted = shuffle_by_perturbed_duration(&durations, &ShuffleSpec::new(32), &mut rng).unwrap();

    let mut order: Vec<usize> = (0..durations.len()).collect();
    rng.shuffle(&mut order);
    let random: Vec<Vec<usize>> = order.chunks(32).map(<[usize]>::to_vec).collect();

    let (a, b) = (mean_spread(&sorted, &durations), mean_spread(&random, &durations));
    assert!(a < b, "perturbed {a} vs random {b}");
    // Jitter of ±15% bounds the spread of neighbours in perturbed order.
    assert!(a < 1.15 / 0.85 + 0.05, "{a}");
}

#[test]
fn collapsed_perturbation_is_plain_sort() {
    let durations = [3.0, 1.0, 2.0, 1.0, 5.0];
    let spec = ShuffleSpec { perturbation_low: 1.0, perturbation_high: 1.0, batch_size: 2 };
    let batches = shuffle_by_perturbed_duration(&durations, &spec, &mut RngStream::new(0)).unwrap();
    assert_eq!(batches, vec![vec![1, 3], vec![2, 0], vec![4]]);
}

#[test]
fn global_draws_are_zero_mean() {
    let n = 100_000;
    let cfg = AugmentationConfig {
        max_global_shift: 4.0,
        max_local_shift: 0.0,
        max_scale: 1.8,
        mean_normalize: false,
        mode: Mode::Train,
        seed: 17,
    };
    // One-token sequences at 0 expose Δ·λ; replaying the stream recovers each draw.
    let p = PositionSet1D::new(n, 1, vec![0.0; n]).unwrap();
    let out = augment_positions_1d(&p, &cfg, &mut RngStream::new(cfg.seed)).unwrap();
    let mut r = RngStream::new(cfg.seed);
    let deltas: Vec<f64> = (0..n).map(|_| r.uniform(-4.0, 4.0)).collect();
    (0..n).for_each(|_| {
        r.uniform(0.0, 0.0);
    });
    let logs: Vec<f64> = (0..n).map(|_| r.uniform(-(1.8f64.ln()), 1.8f64.ln())).collect();
    for b in 0..n {
        assert!((out.as_slice()[b] - deltas[b] * logs[b].exp()).abs() < 1e-12);
    }
    let within = |xs: &[f64], bound: f64| {
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sigma = bound / 3f64.sqrt();
        mean.abs() <= 3.0 * sigma / (n as f64).sqrt()
    };
    assert!(within(&deltas, 4.0));
    assert!(within(&logs, 1.8f64.ln()));
}

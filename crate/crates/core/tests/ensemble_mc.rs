use cycletree::ensemble::{
    default_min_leaf_grid, ensemble_forecast, fit_ensemble, select_min_leaf, AugmentationConfig, TrainingSet, Variant,
};
use cycletree::resample::{ResamplePlan, Scheme};
use cycletree::tree::{fit_cart, PredictorWindow};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn dataset(rng: &mut ChaCha8Rng, rows: usize, f: impl Fn(f64, f64, &mut ChaCha8Rng) -> f64) -> TrainingSet {
    let mut windows = Vec::with_capacity(rows);
    let mut targets = Vec::with_capacity(rows);
    for _ in 0..rows {
        let (a, b) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        windows.push(PredictorWindow::single(vec![a, b]).unwrap());
        targets.push(f(a, b, rng));
    }
    TrainingSet { windows, targets, periods: (1..=rows).collect() }
}

fn step(a: f64, _: f64, rng: &mut ChaCha8Rng) -> f64 {
    let e: f64 = StandardNormal.sample(rng);
    f64::from(a >= 0.0) + 0.5 * e
}

#[test]
fn bagging_beats_a_single_tree_on_step_data() {
    let cfg = AugmentationConfig::default();
    let mut wins = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let train = dataset(&mut rng, 100, step);
        let test = dataset(&mut rng, 500, |a, _, _| f64::from(a >= 0.0));
        let plan = ResamplePlan { scheme: Scheme::PairBootstrap, j: 100, seed };
        let ens = fit_ensemble(&train, &plan, 5, &cfg, Variant::Autoregressive).unwrap();
        let single = fit_cart(&train.targets, &train.windows, 5).unwrap();
        let mse = |pred: &dyn Fn(&PredictorWindow) -> f64| {
            test.windows.iter().zip(&test.targets).map(|(w, y)| (pred(w) - y).powi(2)).sum::<f64>() / 500.0
        };
        if mse(&|w| ensemble_forecast(&ens, w)) <= mse(&|w| single.predict(w)) {
            wins += 1;
        }
    }
    assert!(wins >= 18, "ensemble won {wins}/20");
}

#[test]
fn min_leaf_selection_on_noise_and_fine_structure() {
    let grid = default_min_leaf_grid();
    let median = 27.5;
    let mut large = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let data = dataset(&mut rng, 200, |_, _, r| StandardNormal.sample(r));
        if select_min_leaf(&data, &grid).unwrap() as f64 >= median {
            large += 1;
        }
    }
    assert!(large >= 15, "large leaf chosen {large}/20");

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let fine = dataset(&mut rng, 800, |a, b, _| (8.0 * a).sin() + (6.0 * b).cos());
    assert_eq!(select_min_leaf(&fine, &grid).unwrap(), 5);
}

#[test]
fn monte_carlo_error_shrinks_with_members() {
    let cfg = AugmentationConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let data = dataset(&mut rng, 80, step);
    let probe = PredictorWindow::single(vec![0.05, 0.3]).unwrap();
    let spread = |j: usize| {
        let f: Vec<f64> = (0..150u64)
            .map(|s| {
                let plan = ResamplePlan { scheme: Scheme::PairBootstrap, j, seed: 1000 + s * 7 + j as u64 };
                ensemble_forecast(&fit_ensemble(&data, &plan, 5, &cfg, Variant::Autoregressive).unwrap(), &probe)
            })
            .collect();
        let m = f.iter().sum::<f64>() / f.len() as f64;
        (f.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (f.len() - 1) as f64).sqrt()
    };
    let ratio = spread(100) / spread(400);
    assert!((2.0 * 0.7..=2.0 * 1.3).contains(&ratio), "s.e. ratio {ratio}");
}

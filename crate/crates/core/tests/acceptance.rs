//! One line per acceptance criterion; exits nonzero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cycletree::data::{observation_structure, standardize, Month, TransformSpec};
use cycletree::ecm::{
    cm_update_covariance, cm_update_initial_conditions, cm_update_loadings, cm_update_transition, e_step, fit,
    penalized_expected_objective, trend_window, Candidate, ConvergenceConfig, SelectionGrid, ALPHA_RANGE, BETA_RANGE,
    LAMBDA_RANGE,
};
use cycletree::ensemble::{
    default_min_leaf_grid, ensemble_forecast, fit_ensemble, mean_of, predictor_vector, AugmentationConfig, TrainingSet,
    Variant,
};
use cycletree::evaluate::{cycle_views, evaluate, target_series, EvalConfig, MinLeaf};
use cycletree::kalman::{filter, smooth, smooth_params};
use cycletree::model::{simulate, ModelShape, PenaltyConfig, BASELINE_SERIES, DEFAULT_EPSILON};
use cycletree::resample::{artificial_jackknife, ResamplePlan, Scheme};
use cycletree::synthetic::{simulate_study, SyntheticConfig};
use cycletree::testkit::{
    brute_force_sse, correlation, diag_system, example_window, sample_tree, random_data, random_panel, random_system,
    reduced_truth, toy_structure, JointOracle,
};
use cycletree::tree::{fit_cart, split_indicator, training_sse, PredictorWindow};

const SMOOTHER_TOL: f64 = 1e-8;
const SMOOTHER_BUDGET: Duration = Duration::from_secs(30);
const NORMAL_EQ_TOL: f64 = 1e-6;
const MONOTONE_TOL: f64 = -1e-8;
const RECOVERY_CORR: f64 = 0.8;
const RECOVERY_MAX_ITER: usize = 1000;
const RECOVERY_BUDGET: Duration = Duration::from_secs(120);
const CART_TOL: f64 = 1e-9;
const E2E_SEEDS: u64 = 10;
const E2E_MIN_WINS: usize = 7;
const E2E_MEMBERS: usize = 30;
const E2E_BUDGET: Duration = Duration::from_secs(600);

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn smoother_oracle() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for case in 0..200 {
        let q = rng.random_range(1..=3);
        let n = rng.random_range(1..=3);
        let s = rng.random_range(1..=8);
        let eps = rng.random_range(0.05..1.0);
        let miss = rng.random_range(0.0..0.6);
        let sys = random_system(&mut rng, q, n, eps);
        let panel = random_panel(&mut rng, n, s, miss);
        let mask = observation_structure(&panel);
        let f = filter(&sys, &panel, &mask).map_err(|e| e.to_string())?;
        let sm = smooth(&sys, &panel, &mask).map_err(|e| e.to_string())?;
        let oracle = JointOracle::new(&sys, &panel);
        let mut track = |d: f64, what: &str, t: usize| -> Result<(), String> {
            worst = worst.max(d);
            ensure(d < SMOOTHER_TOL, || format!("case {case}: {what} at t = {t} off by {d:e}"))
        };
        for t in 1..=s {
            let (mean, cov) = oracle.condition(t);
            track((&f.filtered_mean[t] - oracle.block_mean(&mean, t)).amax(), "filtered mean", t)?;
            track((&f.filtered_cov[t] - oracle.block_cov(&cov, t, t)).amax(), "filtered cov", t)?;
        }
        let (mean, cov) = oracle.condition(s);
        for t in 0..=s {
            track((&sm.mean[t] - oracle.block_mean(&mean, t)).amax(), "smoothed mean", t)?;
            track((&sm.cov[t] - oracle.block_cov(&cov, t, t)).amax(), "smoothed cov", t)?;
            if t > 0 {
                track((&sm.lag_cov[t - 1] - oracle.block_cov(&cov, t, t - 1)).amax(), "lag-one cov", t)?;
            }
        }
        track((f.loglik - oracle.loglik()).abs(), "log-likelihood", s)?;
    }
    let el = t0.elapsed();
    ensure(el < SMOOTHER_BUDGET, || format!("took {el:?}"))?;
    Ok(format!("200 models, max error {worst:.1e}, {el:.1?}"))
}

fn ecm_coordinates() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (sys, sigma) = diag_system(&mut rng, 2, 2, 0.1);
    let panel = random_panel(&mut rng, 2, 30, 0.0);
    let st = toy_structure(2, 2, &PenaltyConfig { lambda: 0.0, alpha: 0.0, beta: 1.0 }, sys.epsilon);
    let stats = e_step(&sys, &st.innovation, &panel, &observation_structure(&panel)).map_err(|e| e.to_string())?;
    let mut c = DMatrix::zeros(2, 2);
    let mut b = DMatrix::zeros(2, 2);
    for _ in 0..200 {
        cm_update_transition(&stats, &mut c, &sigma, &st).map_err(|e| e.to_string())?;
        cm_update_loadings(&stats, &mut b, &st).map_err(|e| e.to_string())?;
    }
    let direct_c = &stats.g * stats.h.clone().try_inverse().ok_or("H is singular")?;
    let mut err = (&c - direct_c).amax();
    for i in 0..2 {
        let oi = stats.o_by_series[i].clone().try_inverse().ok_or("O_i is singular")?;
        err = err.max((b.row(i) - stats.m.row(i) * oi).amax());
    }
    ensure(err < NORMAL_EQ_TOL, || format!("sweeps off the normal equations by {err:e}"))?;

    let heavy = toy_structure(2, 2, &PenaltyConfig { lambda: 1e6, alpha: 1.0, beta: 1.0 }, 0.1);
    let mut c = DMatrix::from_element(2, 2, 0.3);
    let mut b = DMatrix::from_element(2, 2, 0.3);
    cm_update_transition(&stats, &mut c, &sigma, &heavy).map_err(|e| e.to_string())?;
    cm_update_loadings(&stats, &mut b, &heavy).map_err(|e| e.to_string())?;
    ensure(c.iter().chain(b.iter()).all(|&v| v == 0.0), || "heavy lasso left nonzero entries".into())?;
    Ok(format!("normal equations within {err:.1e}, lasso zeros exact"))
}

fn fixed_stats_monotone() -> Outcome {
    let mut worst = f64::INFINITY;
    for start in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + start);
        let (sys, _) = diag_system(&mut rng, 2, 2, 0.1);
        let panel = random_panel(&mut rng, 2, 15, 0.2);
        let gamma = PenaltyConfig { lambda: rng.random_range(0.0..2.0), alpha: rng.random_range(0.0..1.0), beta: 1.0 };
        let st = toy_structure(2, 2, &gamma, sys.epsilon);
        let stats = e_step(&sys, &st.innovation, &panel, &observation_structure(&panel)).map_err(|e| e.to_string())?;
        let (init, mut sigma) = diag_system(&mut rng, 2, 2, 0.1);
        let (mut mu0, mut om, mut c, mut b) = (init.mu0, init.omega0, init.c, init.b);
        let eval = |mu0: &DVector<f64>, om: &DMatrix<f64>, c: &DMatrix<f64>, b: &DMatrix<f64>, sg: &[f64]| {
            penalized_expected_objective(Candidate { mu0, omega0: om, c, b, sigma: sg, epsilon: 0.1 }, &stats, &st).value
        };
        let mut values = vec![eval(&mu0, &om, &c, &b, &sigma)];
        (mu0, om) = cm_update_initial_conditions(&stats, &st.omega0);
        values.push(eval(&mu0, &om, &c, &b, &sigma));
        cm_update_transition(&stats, &mut c, &sigma, &st).map_err(|e| e.to_string())?;
        values.push(eval(&mu0, &om, &c, &b, &sigma));
        sigma = cm_update_covariance(&stats, &c, &st.innovation).map_err(|e| e.to_string())?;
        values.push(eval(&mu0, &om, &c, &b, &sigma));
        cm_update_loadings(&stats, &mut b, &st).map_err(|e| e.to_string())?;
        values.push(eval(&mu0, &om, &c, &b, &sigma));
        for (k, w) in values.windows(2).enumerate() {
            let step = w[1] - w[0];
            worst = worst.min(step);
            ensure(step >= MONOTONE_TOL, || format!("start {start}, sub-update {}: {} -> {}", k + 1, w[0], w[1]))?;
        }
    }
    Ok(format!("50 starts, smallest step {worst:.2e}"))
}

fn convergence_protocol() -> Outcome {
    let t0 = Instant::now();
    let truth = reduced_truth();
    let s = 600;
    let sim = simulate(&truth, s, 11, Month::new(1960, 1).unwrap()).map_err(|e| e.to_string())?;
    let (z, eta) = standardize(&sim.panel).map_err(|e| e.to_string())?;
    let gamma = PenaltyConfig { lambda: 0.05, alpha: 0.5, beta: 1.0 };
    let cfg = ConvergenceConfig::default();
    ensure(cfg.max_iter == RECOVERY_MAX_ITER && cfg.median_tol == 1e-3 && cfg.q95_tol == 1e-2, || {
        format!("unexpected stopping rule {cfg:?}")
    })?;
    let (params, diag) = fit(&z, &truth.shape, &eta, &gamma, &cfg).map_err(|e| e.to_string())?;
    ensure(diag.converged && diag.iterations < RECOVERY_MAX_ITER, || {
        format!("not converged after {} iterations", diag.iterations)
    })?;
    let sm = smooth_params(&params, &z, &observation_structure(&z)).map_err(|e| e.to_string())?;
    let cs = truth.shape.common_cycle_state();
    let est = sm.state_path(cs);
    let tru: Vec<f64> = (1..=s).map(|t| sim.states[(cs, t)]).collect();
    let corr = correlation(&est, &tru);
    let el = t0.elapsed();
    ensure(corr >= RECOVERY_CORR, || format!("cycle correlation {corr:.3}"))?;
    ensure(el < RECOVERY_BUDGET, || format!("took {el:?}"))?;
    Ok(format!("{} iterations, cycle correlation {corr:.3}, {el:.1?}", diag.iterations))
}

fn cart_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for case in 0..100 {
        let rows = rng.random_range(8..=50);
        let min_leaf = rng.random_range(1..=5);
        let (y, w) = random_data(&mut rng, rows, 3, 2);
        let tree = fit_cart(&y, &w, min_leaf).map_err(|e| e.to_string())?;
        let got = training_sse(&tree, &y, &w);
        let want = brute_force_sse(&y, &w, (0..rows).collect(), min_leaf);
        ensure((got - want).abs() <= CART_TOL * (1.0 + want), || format!("case {case}: SSE {got} vs {want}"))?;
    }

    let t = sample_tree();
    ensure(t.leaves() == (vec![3, 4, 6, 7], vec![1, 2, 5]), || "leaf and internal sets differ".into())?;
    let walks = [
        (3, vec![(1, 3)]),
        (4, vec![(1, 2), (2, 4)]),
        (6, vec![(1, 2), (2, 5), (5, 6)]),
        (7, vec![(1, 2), (2, 5), (5, 7)]),
    ];
    for (leaf, walk) in walks {
        ensure(t.root_to_leaf_walk(leaf).map_err(|e| e.to_string())? == walk, || format!("walk to {leaf} differs"))?;
    }
    let x = example_window();
    let products: Vec<u8> = [3, 4, 6, 7]
        .iter()
        .map(|&u| {
            t.root_to_leaf_walk(u).unwrap().iter().map(|&(v, c)| split_indicator(&x, &t.label(v).unwrap(), c)).product()
        })
        .collect();
    ensure(products == [1, 0, 0, 0], || format!("indicator products {products:?}"))?;
    ensure(t.predict(&x) == 30.0 && t.predict_descend(&x) == 30.0, || format!("prediction {}", t.predict(&x)))?;
    Ok("100 datasets match exhaustive search; worked examples exact".into())
}

fn step_data(rng: &mut ChaCha8Rng, rows: usize) -> TrainingSet {
    let mut windows = Vec::with_capacity(rows);
    let mut targets = Vec::with_capacity(rows);
    for _ in 0..rows {
        let (a, b) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        windows.push(PredictorWindow::single(vec![a, b]).unwrap());
        targets.push(f64::from(a >= 0.0) + 0.3 * b + rng.random_range(-0.3..0.3));
    }
    TrainingSet { windows, targets, periods: (1..=rows).collect() }
}

fn ensemble_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let data = step_data(&mut rng, 80);
    let cfg = AugmentationConfig::default();
    let probes: Vec<PredictorWindow> =
        (0..20).map(|_| PredictorWindow::single(vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).unwrap()).collect();

    let identity = ResamplePlan { scheme: Scheme::BlockBootstrap { block_length: 80 }, j: 1, seed: 3 };
    let one = fit_ensemble(&data, &identity, 5, &cfg, Variant::Autoregressive).map_err(|e| e.to_string())?;
    let single = fit_cart(&data.targets, &data.windows, 5).map_err(|e| e.to_string())?;
    ensure(probes.iter().all(|p| ensemble_forecast(&one, p) == single.predict(p)), || "J = 1 differs from one tree".into())?;

    let plan = ResamplePlan { scheme: Scheme::PairBootstrap, j: 25, seed: 9 };
    let a = fit_ensemble(&data, &plan, 5, &cfg, Variant::Autoregressive).map_err(|e| e.to_string())?;
    let b = fit_ensemble(&data, &plan, 5, &cfg, Variant::Autoregressive).map_err(|e| e.to_string())?;
    ensure(a == b, || "same seed gave different ensembles".into())?;
    for p in &probes {
        let preds: Vec<f64> = a.trees.iter().map(|t| t.predict(p)).collect();
        let f = ensemble_forecast(&a, p);
        ensure(f == mean_of(preds.iter().copied()), || "forecast is not the member mean".into())?;
        let (lo, hi) = preds.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        ensure(lo <= f && f <= hi, || format!("forecast {f} outside [{lo}, {hi}]"))?;
    }

    let masks = artificial_jackknife(5, 2, 10, 1).map_err(|e| e.to_string())?;
    let mut all = Vec::new();
    for i in 0..5 {
        for j in i + 1..5 {
            all.push(vec![i, j]);
        }
    }
    ensure(masks == all, || format!("jackknife masks {masks:?}"))?;
    Ok("mean, J = 1, bounds, determinism; 10 of 10 jackknife combinations".into())
}

fn augmentation() -> Outcome {
    let aug = AugmentationConfig::default();
    ensure(aug.width(Variant::Augmented) == 77, || format!("width {}", aug.width(Variant::Augmented)))?;
    ensure(aug.width(Variant::Autoregressive) == 12, || format!("AR width {}", aug.width(Variant::Autoregressive)))?;

    let syn = SyntheticConfig { shape: ModelShape::baseline(3), len: 120, cycle: vec![1.4, -0.5], ..Default::default() };
    let study = simulate_study(&syn).map_err(|e| e.to_string())?;
    let full = study.vintage(120);
    let (z, eta) = standardize(&full.select(&study.macro_ids).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let conv = ConvergenceConfig { max_iter: 40, ..Default::default() };
    let gamma = PenaltyConfig::new(0.1, 0.5, 1.2).map_err(|e| e.to_string())?;
    let (params, _) = fit(&z, &syn.shape, &eta, &gamma, &conv).map_err(|e| e.to_string())?;
    let views = cycle_views(&params, &z, &aug).map_err(|e| e.to_string())?;
    let y = target_series(&full, "PRICE1", TransformSpec::MoMSquaredReturn).map_err(|e| e.to_string())?;
    for t in [13, 40, 77, 119] {
        let cut_views = cycle_views(&params, &z.truncate(t), &aug).map_err(|e| e.to_string())?;
        let a = predictor_vector(&y[..t], Some(&cut_views), &aug, Variant::Augmented, t).map_err(|e| e.to_string())?;
        let b = predictor_vector(&y, Some(&views), &aug, Variant::Augmented, t).map_err(|e| e.to_string())?;
        ensure(a.is_some() && a == b, || format!("window at t = {t} changes with later data"))?;
        ensure(a.as_ref().map(Vec::len) == Some(77), || format!("window at t = {t} has the wrong length"))?;
    }
    Ok("length 77; truncated and full panels agree at t = 13, 40, 77, 119".into())
}

fn end_to_end() -> Outcome {
    let t0 = Instant::now();
    let schemes = [Scheme::PairBootstrap, Scheme::ArtificialJackknife { d_fraction: 0.2 }];
    let mut wins = [0usize; 2];
    let mut ratios = [Vec::new(), Vec::new()];
    for seed in 1..=E2E_SEEDS {
        let syn = SyntheticConfig { seed, len: 300, ..Default::default() };
        let study = simulate_study(&syn).map_err(|e| e.to_string())?;
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        study.write_vintages(dir.path(), 60).map_err(|e| e.to_string())?;
        let cfg = EvalConfig {
            shape: syn.shape.clone(),
            targets: study.target_ids.clone(),
            schemes: schemes.to_vec(),
            members: E2E_MEMBERS,
            seed,
            min_leaf: MinLeaf::Select(default_min_leaf_grid()),
            refit_every: 12,
            ..Default::default()
        };
        let report = evaluate(dir.path(), &cfg, None).map_err(|e| e.to_string())?;
        for (k, s) in schemes.iter().enumerate() {
            let get = |v| report.rel_mse("PRICE1", s.name(), v).ok_or_else(|| format!("missing {} row", s.name()));
            let (ar, augm) = (get(Variant::Autoregressive)?, get(Variant::Augmented)?);
            if augm < ar {
                wins[k] += 1;
            }
            ratios[k].push(augm / ar);
        }
    }
    let el = t0.elapsed();
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let detail = format!(
        "augmented beats autoregressive on {}/{E2E_SEEDS} (pair) and {}/{E2E_SEEDS} (jackknife); median ratio {:.3} / {:.3}; {el:.0?}",
        wins[0],
        wins[1],
        median(&mut ratios[0]),
        median(&mut ratios[1])
    );
    ensure(wins.iter().all(|&w| w >= E2E_MIN_WINS), || detail.clone())?;
    ensure(el < E2E_BUDGET, || detail.clone())?;
    Ok(detail)
}

fn structural_constants() -> Outcome {
    let shape = ModelShape::baseline(12);
    ensure(shape.q() == 32 && shape.r() == 21, || format!("q = {}, r = {}", shape.q(), shape.r()))?;
    ensure(DEFAULT_EPSILON == 1e-4, || format!("epsilon {DEFAULT_EPSILON}"))?;
    for s in [25usize, 100, 300, 600] {
        let rounded = (2.0 * (s as f64).sqrt() + 1.0).round() as usize;
        let want = if rounded % 2 == 0 { rounded + 1 } else { rounded };
        let w = trend_window(s);
        ensure(w == want, || format!("window {w} for s = {s}, expected {want}"))?;
    }
    ensure(trend_window(100) == 21, || "window at s = 100".into())?;
    ensure(default_min_leaf_grid() == (5..=50).step_by(5).collect::<Vec<_>>(), || "leaf grid".into())?;
    ensure(LAMBDA_RANGE == (1e-2, 2.5) && ALPHA_RANGE == (0.0, 1.0) && BETA_RANGE == (1.0, 1.2), || "ranges".into())?;
    let ids: Vec<String> = BASELINE_SERIES.iter().map(|s| s.to_string()).collect();
    let g = SelectionGrid::default_for(&ids);
    let inside = |v: &[f64], (lo, hi): (f64, f64)| v.iter().all(|&x| x >= lo - 1e-12 && x <= hi + 1e-12);
    ensure(inside(&g.lambda, LAMBDA_RANGE) && inside(&g.alpha, ALPHA_RANGE) && inside(&g.beta, BETA_RANGE), || {
        "default grid leaves its ranges".into()
    })?;
    Ok("q = 32, r = 21, epsilon = 1e-4, window = 2 sqrt(s) + 1, leaf grid 5..50, ranges".into())
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("smoother oracle", smoother_oracle),
        ("ECM coordinate correctness", ecm_coordinates),
        ("fixed-stats monotonicity", fixed_stats_monotone),
        ("convergence protocol", convergence_protocol),
        ("CART oracle", cart_oracle),
        ("ensemble identities", ensemble_identities),
        ("augmentation", augmentation),
        ("end-to-end direction", end_to_end),
        ("structural constants", structural_constants),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

//! One function per subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use cycletree::data::{load_csv_panel, observation_structure, standardize, write_csv_panel, ColumnMap, Panel, Standardizer};
use cycletree::ecm::{fit, select_hyperparameters, ConvergenceConfig};
use cycletree::ensemble::{
    build_augmented_predictors, ensemble_forecast, fit_ensemble, load_ensemble, predictor_vector, save_ensemble,
    AugmentationConfig,
};
use cycletree::evaluate::{cycle_views, evaluate, target_series, AccessLog, EvalConfig};
use cycletree::kalman::{smooth_params, write_cycle_csv};
use cycletree::model::{ModelShape, ParamSnapshot, StateSpaceParams};
use cycletree::resample::ResamplePlan;
use cycletree::synthetic::{simulate_study, SyntheticConfig};
use cycletree::tree::PredictorWindow;
use cycletree::{Error, Result};

use crate::config::RunConfig;

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Config(format!("`{key}` is not set")))
}

fn prepare_out(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("config.echo"), cfg.echo())?;
    Ok(())
}

/// Macro columns: `series` if given, the whole panel if it has `n` columns,
/// else the shape's default mnemonics.
fn macro_panel(panel: &Panel, shape: &ModelShape, cfg: &RunConfig) -> Result<Panel> {
    let ids = if !cfg.series.is_empty() {
        cfg.series.clone()
    } else if panel.n_series() == shape.n {
        panel.series_ids().to_vec()
    } else {
        let defaults = shape.default_series_ids();
        if defaults.iter().all(|id| panel.series_index(id).is_some()) {
            defaults
        } else {
            return Err(Error::Shape(format!(
                "shape mismatch: panel has {} series, model expects {}",
                panel.n_series(),
                shape.n
            )));
        }
    };
    if ids.len() != shape.n {
        return Err(Error::Shape(format!("shape mismatch: {} series listed, model expects {}", ids.len(), shape.n)));
    }
    panel.select(&ids)
}

fn load_panel(cfg: &RunConfig) -> Result<Panel> {
    load_csv_panel(required(&cfg.data, "data")?, &ColumnMap::default())
}

fn load_params(cfg: &RunConfig) -> Result<StateSpaceParams> {
    let path = required(&cfg.params, "params")?;
    ParamSnapshot::from_json(&fs::read_to_string(path)?)?.to_params()
}

fn convergence(cfg: &RunConfig) -> ConvergenceConfig {
    ConvergenceConfig { max_iter: cfg.max_iter, ..Default::default() }
}

pub fn decompose(cfg: &RunConfig) -> Result<()> {
    let shape = cfg.shape();
    let panel = load_panel(cfg)?;
    let (z, eta) = standardize(&macro_panel(&panel, &shape, cfg)?)?;
    prepare_out(cfg)?;
    let (params, diag) = fit(&z, &shape, &eta, &cfg.gamma, &convergence(cfg))?;
    diag.write_csv_file(&cfg.out.join("diagnostics.csv"))?;
    fs::write(cfg.out.join("params.json"), ParamSnapshot::from_params(&params).to_json()?)?;
    let sm = smooth_params(&params, &z, &observation_structure(&z))?;
    write_cycle_csv(&cfg.out.join("cycle.csv"), z.dates(), &sm.state_path(shape.common_cycle_state()))?;

    let mut w = csv::Writer::from_path(cfg.out.join("trends.csv"))?;
    let mut header = vec!["date".to_string()];
    header.extend((1..=shape.n_trends()).map(|k| format!("trend{k}")));
    w.write_record(&header)?;
    let paths: Vec<Vec<f64>> = (0..shape.n_trends()).map(|k| sm.state_path(k)).collect();
    for (t, d) in z.dates().iter().enumerate() {
        let mut rec = vec![d.to_string()];
        rec.extend(paths.iter().map(|p| p[t].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    for warning in &diag.warnings {
        eprintln!("warning: {warning}");
    }
    if !diag.converged {
        return Err(Error::Numeric(format!(
            "ECM did not converge within {} iterations; diagnostics kept in {}",
            diag.iterations,
            cfg.out.display()
        )));
    }
    Ok(())
}

pub fn select(cfg: &RunConfig) -> Result<()> {
    let shape = cfg.shape();
    let panel = load_panel(cfg)?;
    let macro_p = macro_panel(&panel, &shape, cfg)?;
    let (z, eta) = standardize(&macro_p)?;
    prepare_out(cfg)?;
    let grid = cfg.selection_grid(macro_p.series_ids());
    let res = select_hyperparameters(&z, &shape, &eta, &grid, &cfg.subsampler(), &convergence(cfg))?;
    let mut w = csv::Writer::from_path(cfg.out.join("selection.csv"))?;
    w.write_record(["p", "lambda", "alpha", "beta", "score"])?;
    for s in &res.scores {
        w.write_record([
            s.p.to_string(),
            s.gamma.lambda.to_string(),
            s.gamma.alpha.to_string(),
            s.gamma.beta.to_string(),
            s.score.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    fs::write(
        cfg.out.join("selected.txt"),
        format!("p = {}\nlambda = {}\nalpha = {}\nbeta = {}\n", res.p, res.gamma.lambda, res.gamma.alpha, res.gamma.beta),
    )?;
    Ok(())
}

struct TargetInputs {
    target: String,
    y: Vec<Option<f64>>,
    views: cycletree::kalman::CycleViews,
    last: cycletree::data::Month,
}

fn target_inputs(cfg: &RunConfig) -> Result<TargetInputs> {
    let params = load_params(cfg)?;
    let panel = load_panel(cfg)?;
    let eta = Standardizer::new(params.eta.clone())?;
    let z = eta.apply(&macro_panel(&panel, &params.shape, cfg)?)?;
    let target = cfg
        .targets
        .first()
        .cloned()
        .ok_or_else(|| Error::Config("`targets` is not set".into()))?;
    let y = target_series(&panel, &target, cfg.target_transform)?;
    let views = cycle_views(&params, &z, &AugmentationConfig::default())?;
    let last = *panel.dates().last().ok_or_else(|| Error::Config("empty panel".into()))?;
    Ok(TargetInputs { target, y, views, last })
}

fn ensemble_dir(cfg: &RunConfig) -> PathBuf {
    cfg.ensemble.clone().unwrap_or_else(|| cfg.out.join("ensemble"))
}

pub fn fit_ensemble_cmd(cfg: &RunConfig) -> Result<()> {
    let inputs = target_inputs(cfg)?;
    prepare_out(cfg)?;
    let aug = AugmentationConfig::default();
    let data = build_augmented_predictors(&inputs.y, Some(&inputs.views), &aug, cfg.variant)?;
    let min_leaf = cfg.min_leaf.resolve(&data)?;
    let scheme = *cfg.schemes.first().ok_or_else(|| Error::Config("`schemes` is empty".into()))?;
    let plan = ResamplePlan { scheme, j: cfg.members, seed: cfg.seed };
    let model = fit_ensemble(&data, &plan, min_leaf, &aug, cfg.variant)?;
    save_ensemble(&model, &ensemble_dir(cfg))
}

pub fn forecast(cfg: &RunConfig) -> Result<()> {
    let inputs = target_inputs(cfg)?;
    let model = load_ensemble(&ensemble_dir(cfg))?;
    let x = predictor_vector(&inputs.y, Some(&inputs.views), &model.config, model.variant, inputs.y.len())?
        .ok_or_else(|| Error::Config("target history is too short at the last period".into()))?;
    let f = ensemble_forecast(&model, &PredictorWindow::single(x)?);
    prepare_out(cfg)?;
    let mut w = csv::Writer::from_path(cfg.out.join("forecast.csv"))?;
    w.write_record(["date", "target", "variant", "forecast"])?;
    w.write_record([inputs.last.succ().to_string(), inputs.target, model.variant.name().to_string(), f.to_string()])?;
    w.flush()?;
    Ok(())
}

pub fn simulate(cfg: &RunConfig) -> Result<()> {
    let syn = SyntheticConfig {
        shape: cfg.shape(),
        len: cfg.sim_len,
        seed: cfg.seed,
        vol_base: cfg.vol_base,
        vol_slope: cfg.vol_slope,
        n_targets: cfg.sim_targets,
        ..Default::default()
    };
    let study = simulate_study(&syn)?;
    prepare_out(cfg)?;
    write_csv_panel(&cfg.out.join("panel.csv"), &study.panel)?;
    study.write_truth(&cfg.out.join("truth.csv"))?;
    fs::write(cfg.out.join("truth_params.json"), ParamSnapshot::from_params(&study.params).to_json()?)?;
    if cfg.sim_vintages > 0 {
        study.write_vintages(&cfg.out.join("vintages"), cfg.sim_vintages)?;
    }
    Ok(())
}

pub fn evaluate_cmd(cfg: &RunConfig) -> Result<()> {
    let dir = required(&cfg.vintages, "vintages")?;
    let ecfg = EvalConfig {
        shape: cfg.shape(),
        macro_ids: cfg.series.clone(),
        targets: cfg.targets.clone(),
        target_transform: cfg.target_transform,
        gamma: cfg.gamma,
        convergence: convergence(cfg),
        schemes: cfg.schemes.clone(),
        members: cfg.members,
        seed: cfg.seed,
        min_leaf: cfg.min_leaf.clone(),
        augmentation: AugmentationConfig::default(),
        mode: cfg.mode,
        refit_every: cfg.refit_every,
    };
    prepare_out(cfg)?;
    let log = AccessLog::default();
    let report = evaluate(dir, &ecfg, Some(&log))?;
    report.write_csv(&cfg.out.join("report.csv"))?;
    report.write_forecasts_csv(&cfg.out.join("forecasts.csv"))?;
    let mut w = csv::Writer::from_path(cfg.out.join("access_log.csv"))?;
    w.write_record(["processing", "file_vintage", "path"])?;
    let mut records = log.records();
    records.sort_by(|a, b| (a.processing, a.file_vintage, &a.path).cmp(&(b.processing, b.file_vintage, &b.path)));
    for r in &records {
        w.write_record([r.processing.to_string(), r.file_vintage.to_string(), r.path.display().to_string()])?;
    }
    w.flush()?;
    fs::write(
        cfg.out.join("summary.txt"),
        format!(
            "vintages = {}\nfirst_origin = {}\nlast_origin = {}\nlookahead_violations = {}\n",
            report.vintages,
            report.first_origin,
            report.last_origin,
            log.lookahead_violations().len()
        ),
    )?;
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    if !log.lookahead_violations().is_empty() {
        return Err(Error::Integrity("a file dated after its vintage was read".into()));
    }
    Ok(())
}

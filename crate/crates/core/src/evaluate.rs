//! Real-time replay of vintages and relative-MSE reports.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{apply_transform, load_csv_panel, list_vintages, observation_structure, standardize, ColumnMap, Month, Panel, Standardizer, TransformSpec};
use crate::ecm::{fit, fit_from, ConvergenceConfig, FitDiagnostics};
use crate::ensemble::{
    build_augmented_predictors, default_min_leaf_grid, ensemble_forecast, fit_ensemble, mean_of, predictor_vector,
    select_min_leaf, AugmentationConfig, Variant,
};
use crate::error::{Error, Result};
use crate::kalman::{realtime_cycle_views, CycleViews, LinearGaussian};
use crate::model::{ModelShape, PenaltyConfig, StateSpaceParams};
use crate::resample::{artificial_jackknife, ResamplePlan, Scheme};
use crate::tree::{fit_cart, PredictorWindow};

/// Where jackknife masks are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Hide predictor rows.
    Fast,
    /// Hide macro panel cells and re-run the filter per member.
    Full,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fast" => Ok(Mode::Fast),
            "full" => Ok(Mode::Full),
            other => Err(Error::Config(format!("unknown mode `{other}`, expected fast or full"))),
        }
    }
}

/// Fixed leaf size or a grid searched on each training set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MinLeaf {
    Fixed(usize),
    Select(Vec<usize>),
}

impl MinLeaf {
    pub fn resolve(&self, data: &crate::ensemble::TrainingSet) -> Result<usize> {
        match self {
            MinLeaf::Fixed(k) => Ok(*k),
            MinLeaf::Select(grid) => select_min_leaf(data, grid),
        }
    }
}

/// Everything the replay needs besides the vintage files.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub shape: ModelShape,
    /// Macro columns in model order; empty means the shape's default ids.
    pub macro_ids: Vec<String>,
    pub targets: Vec<String>,
    pub target_transform: TransformSpec,
    pub gamma: PenaltyConfig,
    pub convergence: ConvergenceConfig,
    pub schemes: Vec<Scheme>,
    pub members: usize,
    pub seed: u64,
    pub min_leaf: MinLeaf,
    pub augmentation: AugmentationConfig,
    pub mode: Mode,
    /// Re-estimate the state-space model every this many vintages.
    pub refit_every: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            shape: ModelShape::baseline(12),
            macro_ids: Vec::new(),
            targets: Vec::new(),
            target_transform: TransformSpec::MoMSquaredReturn,
            gamma: PenaltyConfig { lambda: 0.1, alpha: 0.5, beta: 1.2 },
            convergence: ConvergenceConfig::default(),
            schemes: vec![Scheme::PairBootstrap, Scheme::ArtificialJackknife { d_fraction: 0.2 }],
            members: 100,
            seed: 1,
            min_leaf: MinLeaf::Select(default_min_leaf_grid()),
            augmentation: AugmentationConfig::default(),
            mode: Mode::Fast,
            refit_every: 12,
        }
    }
}

impl EvalConfig {
    pub fn macro_ids(&self) -> Vec<String> {
        if self.macro_ids.is_empty() {
            self.shape.default_series_ids()
        } else {
            self.macro_ids.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        self.gamma.validate()?;
        self.convergence.validate()?;
        self.augmentation.validate()?;
        if self.macro_ids().len() != self.shape.n {
            return Err(Error::Shape(format!(
                "shape mismatch: {} macro series for a model with n = {}",
                self.macro_ids().len(),
                self.shape.n
            )));
        }
        if self.targets.is_empty() || self.schemes.is_empty() {
            return Err(Error::Config("evaluation needs at least one target and one scheme".into()));
        }
        if self.refit_every == 0 || self.members == 0 {
            return Err(Error::Config("refit_every and members must be positive".into()));
        }
        for s in &self.schemes {
            ResamplePlan { scheme: *s, j: self.members, seed: self.seed }.validate()?;
        }
        Ok(())
    }

    fn plan(&self, scheme: Scheme, seed: u64) -> ResamplePlan {
        ResamplePlan { scheme, j: self.members, seed }
    }
}

/// One file read during a replay.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessRecord {
    /// Vintage being processed when the file was opened.
    pub processing: Month,
    pub file_vintage: Month,
    pub path: PathBuf,
}

/// Thread-safe record of every vintage file read.
#[derive(Debug, Clone, Default)]
pub struct AccessLog(Arc<Mutex<Vec<AccessRecord>>>);

impl AccessLog {
    pub fn record(&self, rec: AccessRecord) {
        self.0.lock().expect("access log poisoned").push(rec);
    }

    pub fn records(&self) -> Vec<AccessRecord> {
        self.0.lock().expect("access log poisoned").clone()
    }

    /// Reads of files dated after the vintage being processed.
    pub fn lookahead_violations(&self) -> Vec<AccessRecord> {
        self.records().into_iter().filter(|r| r.file_vintage > r.processing).collect()
    }
}

fn load_vintage(path: &Path, vintage: Month, processing: Month, log: Option<&AccessLog>) -> Result<Panel> {
    if let Some(log) = log {
        log.record(AccessRecord { processing, file_vintage: vintage, path: path.to_path_buf() });
    }
    Ok(load_csv_panel(path, &ColumnMap::default())?.with_vintage(vintage))
}

/// Model MSE over zero-forecast MSE.
pub fn relative_mse(forecasts: &[f64], outcomes: &[f64]) -> Result<f64> {
    if forecasts.len() != outcomes.len() || outcomes.is_empty() {
        return Err(Error::Shape("forecasts and outcomes must be nonempty and aligned".into()));
    }
    let zero = mean_of(outcomes.iter().map(|y| y * y));
    if zero <= 0.0 {
        return Err(Error::Domain("zero forecast is exact; relative MSE undefined".into()));
    }
    Ok(mean_of(forecasts.iter().zip(outcomes).map(|(f, y)| (f - y).powi(2))) / zero)
}

/// Cycle views for a standardized macro panel under fixed parameters.
pub fn cycle_views(params: &StateSpaceParams, z: &Panel, aug: &AugmentationConfig) -> Result<CycleViews> {
    let sys = LinearGaussian::from_params(params);
    let mask = observation_structure(z);
    realtime_cycle_views(&sys, z, &mask, params.shape.common_cycle_state(), params.shape.p, aug.backward, aug.forward)
}

/// Transformed target series aligned with the panel dates.
pub fn target_series(panel: &Panel, id: &str, spec: TransformSpec) -> Result<Vec<Option<f64>>> {
    let one = panel.select(&[id.to_string()])?;
    Ok(apply_transform(&one, &[spec])?.series(0))
}

/// Forecast of `Y_{s+1}` from data through `s = target.len()`.
pub fn forecast_next(
    target: &[Option<f64>],
    views: Option<&CycleViews>,
    aug: &AugmentationConfig,
    variant: Variant,
    plan: &ResamplePlan,
    min_leaf: &MinLeaf,
) -> Result<Option<f64>> {
    let s = target.len();
    let Some(x) = predictor_vector(target, views, aug, variant, s)? else { return Ok(None) };
    let data = build_augmented_predictors(target, views, aug, variant)?;
    let ml = min_leaf.resolve(&data)?;
    let model = fit_ensemble(&data, plan, ml, aug, variant)?;
    Ok(Some(ensemble_forecast(&model, &PredictorWindow::single(x)?)))
}

/// Jackknife forecast with masks on the macro panel: every member re-runs
/// the filter on its own incomplete panel.
pub fn forecast_next_full_jackknife(
    params: &StateSpaceParams,
    z: &Panel,
    target: &[Option<f64>],
    aug: &AugmentationConfig,
    plan: &ResamplePlan,
    min_leaf: &MinLeaf,
) -> Result<Option<f64>> {
    let Scheme::ArtificialJackknife { d_fraction } = plan.scheme else {
        return Err(Error::Config("full mode applies to the artificial jackknife only".into()));
    };
    let s = target.len();
    let base_views = cycle_views(params, z, aug)?;
    if predictor_vector(target, Some(&base_views), aug, Variant::Augmented, s)?.is_none() {
        return Ok(None);
    }
    let base = build_augmented_predictors(target, Some(&base_views), aug, Variant::Augmented)?;
    let ml = min_leaf.resolve(&base)?;
    if base.len() < 2 * ml {
        return Err(Error::Ensemble(format!("{} training rows, need at least {}", base.len(), 2 * ml)));
    }
    let cells: Vec<(usize, usize)> =
        (0..z.len()).flat_map(|t| (0..z.n_series()).filter(move |&i| z.is_observed(i, t)).map(move |i| (i, t))).collect();
    let d = ResamplePlan::deletion_count(d_fraction, cells.len());
    let masks = artificial_jackknife(cells.len(), d, plan.j, plan.seed)?;
    let preds = masks
        .par_iter()
        .map(|m| -> Result<Option<f64>> {
            let hidden: Vec<(usize, usize)> = m.iter().map(|&k| cells[k]).collect();
            let views = cycle_views(params, &z.with_missing(&hidden), aug)?;
            let data = build_augmented_predictors(target, Some(&views), aug, Variant::Augmented)?;
            let tree = fit_cart(&data.targets, &data.windows, ml)?;
            let x = predictor_vector(target, Some(&views), aug, Variant::Augmented, s)?;
            Ok(x.map(|x| tree.predict_descend(&PredictorWindow::single(x).expect("nonempty window"))))
        })
        .collect::<Result<Vec<_>>>()?;
    let preds: Vec<f64> = preds.into_iter().flatten().collect();
    Ok((!preds.is_empty()).then(|| mean_of(preds.into_iter())))
}

fn month_text<S: serde::Serializer>(m: &Month, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(m)
}

/// One scored forecast.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForecastRecord {
    /// Vintage the forecast was made from.
    #[serde(serialize_with = "month_text")]
    pub origin: Month,
    pub target: String,
    pub scheme: String,
    pub variant: String,
    pub forecast: f64,
    pub outcome: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub target: String,
    pub scheme: String,
    pub variant: String,
    pub rel_mse: f64,
}

/// Relative MSEs per target, scheme and variant.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub rows: Vec<ReportRow>,
    pub forecasts: Vec<ForecastRecord>,
    pub first_origin: Month,
    pub last_origin: Month,
    pub vintages: usize,
    pub refits: Vec<(Month, FitDiagnostics)>,
    pub warnings: Vec<String>,
}

impl EvaluationReport {
    pub fn rel_mse(&self, target: &str, scheme: &str, variant: Variant) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.target == target && r.scheme == scheme && r.variant == variant.name())
            .map(|r| r.rel_mse)
    }

    /// Write `target,scheme,variant,rel_mse`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_forecasts_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.forecasts {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn mix(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(seed, |h, &p| {
        let mut z = h ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z ^ (z >> 27)
    })
}

struct VintageResult {
    date: Month,
    /// Target values at the vintage's last period.
    latest: Vec<Option<f64>>,
    /// `(target, scheme, variant)` forecasts of the next period.
    forecasts: Vec<Option<f64>>,
}

fn cells(cfg: &EvalConfig) -> Vec<(usize, usize, Variant)> {
    let mut out = Vec::new();
    for t in 0..cfg.targets.len() {
        for s in 0..cfg.schemes.len() {
            for v in [Variant::Autoregressive, Variant::Augmented] {
                out.push((t, s, v));
            }
        }
    }
    out
}

/// Replay every vintage in `dir`: re-estimate on data available at each
/// vintage, forecast the next month, score against the next vintage.
pub fn evaluate(dir: &Path, cfg: &EvalConfig, log: Option<&AccessLog>) -> Result<EvaluationReport> {
    cfg.validate()?;
    let vintages = list_vintages(dir)?;
    if vintages.len() < 2 {
        return Err(Error::Config("evaluation needs at least two vintages".into()));
    }
    let macro_ids = cfg.macro_ids();

    // Sequential warm-started refits; the vintage being fitted is the only file read.
    let mut eta: Option<Standardizer> = None;
    let mut fitted: Vec<StateSpaceParams> = Vec::new();
    let mut refits = Vec::new();
    let mut warnings = Vec::new();
    for (date, path) in vintages.iter().step_by(cfg.refit_every) {
        let panel = load_vintage(path, *date, *date, log)?;
        let macro_panel = panel.select(&macro_ids)?;
        let (z, e) = match &eta {
            None => standardize(&macro_panel)?,
            Some(e) => (e.apply(&macro_panel)?, e.clone()),
        };
        let (params, diag) = match fitted.last() {
            None => fit(&z, &cfg.shape, &e, &cfg.gamma, &cfg.convergence)?,
            Some(prev) => fit_from(prev.clone(), &z, &cfg.gamma, &cfg.convergence)?,
        };
        if !diag.converged {
            warnings.push(format!("vintage {date}: ECM stopped at {} iterations without converging", diag.iterations));
        }
        warnings.extend(diag.warnings.iter().map(|w| format!("vintage {date}: {w}")));
        eta = Some(e);
        fitted.push(params);
        refits.push((*date, diag));
    }
    let eta = eta.expect("at least one refit");
    let grid = cells(cfg);

    let results: Vec<VintageResult> = vintages
        .par_iter()
        .enumerate()
        .map(|(k, (date, path))| -> Result<VintageResult> {
            let panel = load_vintage(path, *date, *date, log)?;
            let params = &fitted[k / cfg.refit_every];
            let z = eta.apply(&panel.select(&macro_ids)?)?;
            let targets: Vec<Vec<Option<f64>>> =
                cfg.targets.iter().map(|id| target_series(&panel, id, cfg.target_transform)).collect::<Result<_>>()?;
            let latest = targets.iter().map(|y| y.last().copied().flatten()).collect();
            if k + 1 == vintages.len() {
                return Ok(VintageResult { date: *date, latest, forecasts: Vec::new() });
            }
            let views = cycle_views(params, &z, &cfg.augmentation)?;
            let mut forecasts = Vec::with_capacity(grid.len());
            for &(ti, si, v) in &grid {
                let plan = cfg.plan(cfg.schemes[si], mix(cfg.seed, &[k as u64, ti as u64, si as u64]));
                let y = &targets[ti];
                let f = match (cfg.mode, plan.scheme, v) {
                    (Mode::Full, Scheme::ArtificialJackknife { .. }, Variant::Augmented) => {
                        forecast_next_full_jackknife(params, &z, y, &cfg.augmentation, &plan, &cfg.min_leaf)?
                    }
                    _ => forecast_next(y, Some(&views), &cfg.augmentation, v, &plan, &cfg.min_leaf)?,
                };
                forecasts.push(f);
            }
            Ok(VintageResult { date: *date, latest, forecasts })
        })
        .collect::<Result<_>>()?;

    let mut records = Vec::new();
    for ti in 0..cfg.targets.len() {
        for k in 0..results.len() - 1 {
            let Some(outcome) = results[k + 1].latest[ti] else { continue };
            let row: Vec<(usize, Option<f64>)> =
                grid.iter().enumerate().filter(|(_, c)| c.0 == ti).map(|(g, _)| (g, results[k].forecasts[g])).collect();
            if row.iter().any(|(_, f)| f.is_none()) {
                continue;
            }
            for (g, f) in row {
                let (_, si, v) = grid[g];
                records.push(ForecastRecord {
                    origin: results[k].date,
                    target: cfg.targets[ti].clone(),
                    scheme: cfg.schemes[si].name().to_string(),
                    variant: v.name().to_string(),
                    forecast: f.expect("checked"),
                    outcome,
                });
            }
        }
    }
    if records.is_empty() {
        return Err(Error::Config("no forecast could be scored; check target history and vintages".into()));
    }
    let mut rows = Vec::new();
    for &(ti, si, v) in &grid {
        let (scheme, target) = (cfg.schemes[si].name(), &cfg.targets[ti]);
        let (f, y): (Vec<f64>, Vec<f64>) = records
            .iter()
            .filter(|r| &r.target == target && r.scheme == scheme && r.variant == v.name())
            .map(|r| (r.forecast, r.outcome))
            .unzip();
        rows.push(ReportRow {
            target: target.clone(),
            scheme: scheme.to_string(),
            variant: v.name().to_string(),
            rel_mse: relative_mse(&f, &y)?,
        });
    }
    Ok(EvaluationReport {
        rows,
        first_origin: records.first().map(|r| r.origin).expect("nonempty"),
        last_origin: records.iter().map(|r| r.origin).max().expect("nonempty"),
        forecasts: records,
        vintages: vintages.len(),
        refits,
        warnings,
    })
}

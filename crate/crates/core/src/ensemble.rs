//! Cycle augmentation of the predictor set and resampled tree ensembles.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kalman::CycleViews;
use crate::resample::ResamplePlan;
use crate::tree::{fit_cart, BinaryTree, PredictorWindow};

/// Which blocks of the cycle augmentation are built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    /// Largest forecast horizon `j` in `ψ̂_{t+j|t}`.
    pub forward: usize,
    /// Largest backcast lag `k` in `ψ̂_{t-k|t}`.
    pub backward: usize,
    /// Own lags `Y_t, ..., Y_{t-target_lags+1}`.
    pub target_lags: usize,
    pub levels: bool,
    pub differences: bool,
    pub forward_minus_current: bool,
    pub current_minus_backward: bool,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            forward: 11,
            backward: 11,
            target_lags: 12,
            levels: true,
            differences: true,
            forward_minus_current: true,
            current_minus_backward: true,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_lags == 0 {
            return Err(Error::Config("at least one target lag is required".into()));
        }
        Ok(())
    }

    /// Length of the cycle part.
    pub fn augmentation_len(&self) -> usize {
        let (f, b) = (self.forward, self.backward);
        let mut n = 0;
        if self.levels {
            n += f + b + 1;
        }
        if self.differences {
            n += f + b;
        }
        if self.forward_minus_current {
            n += f.saturating_sub(1);
        }
        if self.current_minus_backward {
            n += b.saturating_sub(1);
        }
        n
    }

    /// Predictor count for a variant.
    pub fn width(&self, variant: Variant) -> usize {
        match variant {
            Variant::Autoregressive => self.target_lags,
            Variant::Augmented => self.target_lags + self.augmentation_len(),
        }
    }

    /// Hex SHA-256 of the JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Cycle block of the predictor vector formed at period `t` (1-based).
    pub fn cycle_features(&self, views: &CycleViews, t: usize) -> Result<Vec<f64>> {
        if views.fwd < self.forward || views.back < self.backward {
            return Err(Error::Config(format!(
                "cycle views cover -{}..{}, augmentation needs -{}..{}",
                views.back, views.fwd, self.backward, self.forward
            )));
        }
        let (f, b) = (self.forward as i64, self.backward as i64);
        let psi = |j: i64| views.get(t, j);
        let mut out = Vec::with_capacity(self.augmentation_len());
        if self.levels {
            out.extend((-b..=f).rev().map(psi));
        }
        if self.differences {
            out.extend((-b + 1..=f).rev().map(|j| psi(j) - psi(j - 1)));
        }
        if self.forward_minus_current {
            out.extend((2..=f).rev().map(|j| psi(j) - psi(0)));
        }
        if self.current_minus_backward {
            out.extend((2..=b).map(|k| psi(0) - psi(-k)));
        }
        Ok(out)
    }
}

/// Predictor set of an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Own lags only.
    Autoregressive,
    /// Own lags plus the cycle block.
    Augmented,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Autoregressive => "autoregressive",
            Variant::Augmented => "augmented",
        }
    }
}

/// Predictor vector for period `t` (1-based), `None` if the own lags are
/// incomplete.
pub fn predictor_vector(
    target: &[Option<f64>],
    views: Option<&CycleViews>,
    config: &AugmentationConfig,
    variant: Variant,
    t: usize,
) -> Result<Option<Vec<f64>>> {
    if t < config.target_lags || t > target.len() {
        return Ok(None);
    }
    let mut x = Vec::with_capacity(config.width(variant));
    for k in 0..config.target_lags {
        match target[t - 1 - k] {
            Some(v) => x.push(v),
            None => return Ok(None),
        }
    }
    if variant == Variant::Augmented {
        let views = views.ok_or_else(|| Error::Config("augmented predictors need cycle views".into()))?;
        let c = config.cycle_features(views, t)?;
        if c.iter().any(|v| !v.is_finite()) {
            return Ok(None);
        }
        x.extend(c);
    }
    Ok(Some(x))
}

/// Rows `(X_t, Y_{t+1})` for every usable period.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub windows: Vec<PredictorWindow>,
    pub targets: Vec<f64>,
    /// Period `t` (1-based) of each window.
    pub periods: Vec<usize>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            windows: rows.iter().map(|&r| self.windows[r].clone()).collect(),
            targets: rows.iter().map(|&r| self.targets[r]).collect(),
            periods: rows.iter().map(|&r| self.periods[r]).collect(),
        }
    }

    /// First `k` rows.
    pub fn head(&self, k: usize) -> Self {
        self.subset(&(0..k.min(self.len())).collect::<Vec<_>>())
    }

    pub fn tail_from(&self, k: usize) -> Self {
        self.subset(&(k.min(self.len())..self.len()).collect::<Vec<_>>())
    }
}

/// Training rows: the window built at `t` paired with `Y_{t+1}`.
pub fn build_augmented_predictors(
    target: &[Option<f64>],
    views: Option<&CycleViews>,
    config: &AugmentationConfig,
    variant: Variant,
) -> Result<TrainingSet> {
    config.validate()?;
    let mut set = TrainingSet { windows: Vec::new(), targets: Vec::new(), periods: Vec::new() };
    for t in 1..target.len() {
        let Some(y) = target[t] else { continue };
        if let Some(x) = predictor_vector(target, views, config, variant, t)? {
            set.windows.push(PredictorWindow::single(x)?);
            set.targets.push(y);
            set.periods.push(t);
        }
    }
    Ok(set)
}

/// Fitted ensemble of regression trees.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub trees: Vec<BinaryTree>,
    pub config: AugmentationConfig,
    pub variant: Variant,
    pub min_leaf: usize,
    pub plan: ResamplePlan,
}

fn member_seed(seed: u64, member: usize, attempt: usize) -> u64 {
    seed ^ (member as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (attempt as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

/// Retry limit for degenerate partitions.
pub const MAX_PARTITION_RETRIES: usize = 10;

/// Fit one tree per partition of `plan`.
pub fn fit_ensemble(
    data: &TrainingSet,
    plan: &ResamplePlan,
    min_leaf: usize,
    config: &AugmentationConfig,
    variant: Variant,
) -> Result<EnsembleModel> {
    plan.validate()?;
    if min_leaf == 0 {
        return Err(Error::Config("min_leaf must be at least 1".into()));
    }
    if data.len() < 2 * min_leaf {
        return Err(Error::Ensemble(format!(
            "{} training rows, need at least {}",
            data.len(),
            2 * min_leaf
        )));
    }
    let parts = plan.draw(data.len(), plan.seed)?;
    let trees: Vec<Result<BinaryTree>> = parts
        .into_par_iter()
        .enumerate()
        .map(|(member, mut rows)| {
            let mut attempt = 0;
            while rows.len() < 2 * min_leaf {
                attempt += 1;
                if attempt > MAX_PARTITION_RETRIES {
                    return Err(Error::Ensemble(format!("member {member}: degenerate partitions after retries")));
                }
                let single = ResamplePlan { j: 1, ..*plan };
                rows = single.draw(data.len(), member_seed(plan.seed, member, attempt))?.remove(0);
            }
            let sub = data.subset(&rows);
            fit_cart(&sub.targets, &sub.windows, min_leaf)
        })
        .collect();
    Ok(EnsembleModel { trees: trees.into_iter().collect::<Result<_>>()?, config: *config, variant, min_leaf, plan: *plan })
}

/// Mean of the member forecasts.
pub fn ensemble_forecast(model: &EnsembleModel, window: &PredictorWindow) -> f64 {
    mean_of(model.trees.iter().map(|t| t.predict_descend(window)))
}

/// Arithmetic mean of member predictions.
pub fn mean_of(preds: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = preds.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n as f64
}

/// Default leaf-size grid `{5, 10, ..., 50}`.
pub fn default_min_leaf_grid() -> Vec<usize> {
    (1..=10).map(|k| 5 * k).collect()
}

/// Tune `min_leaf` on a half/half split of the training rows.
pub fn select_min_leaf(data: &TrainingSet, grid: &[usize]) -> Result<usize> {
    if grid.is_empty() {
        return Err(Error::Config("min_leaf grid is empty".into()));
    }
    if data.len() < 20 {
        return Err(Error::Ensemble(format!("{} rows are too few to tune min_leaf", data.len())));
    }
    if grid.len() == 1 {
        return Ok(grid[0]);
    }
    let half = data.len() / 2;
    let (train, valid) = (data.head(half), data.tail_from(half));
    let mut sorted = grid.to_vec();
    sorted.sort_unstable();
    let mut best: Option<(f64, usize)> = None;
    for ml in sorted {
        let tree = fit_cart(&train.targets, &train.windows, ml)?;
        let mse = mean_of(valid.targets.iter().zip(&valid.windows).map(|(y, w)| (y - tree.predict_descend(w)).powi(2)));
        if best.is_none_or(|(b, _)| mse < b) {
            best = Some((mse, ml));
        }
    }
    Ok(best.unwrap().1)
}

/// On-disk description of a saved ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub plan: ResamplePlan,
    pub seed: u64,
    pub members: Vec<String>,
    pub min_leaf: usize,
    pub variant: Variant,
    pub augmentation: AugmentationConfig,
    pub augmentation_hash: String,
}

/// Write member trees and `manifest.json` into `dir`.
pub fn save_ensemble(model: &EnsembleModel, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut members = Vec::with_capacity(model.trees.len());
    for (k, t) in model.trees.iter().enumerate() {
        let name = format!("tree_{k:04}.json");
        std::fs::write(dir.join(&name), t.to_json()?)?;
        members.push(name);
    }
    let manifest = EnsembleManifest {
        plan: model.plan,
        seed: model.plan.seed,
        members,
        min_leaf: model.min_leaf,
        variant: model.variant,
        augmentation: model.config,
        augmentation_hash: model.config.hash(),
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_ensemble(dir: &Path) -> Result<EnsembleModel> {
    let manifest: EnsembleManifest = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.augmentation.hash() != manifest.augmentation_hash {
        return Err(Error::Integrity("augmentation hash does not match its config".into()));
    }
    let trees = manifest
        .members
        .iter()
        .map(|m| BinaryTree::from_json(&std::fs::read_to_string(dir.join(m))?))
        .collect::<Result<Vec<_>>>()?;
    Ok(EnsembleModel {
        trees,
        config: manifest.augmentation,
        variant: manifest.variant,
        min_leaf: manifest.min_leaf,
        plan: manifest.plan,
    })
}

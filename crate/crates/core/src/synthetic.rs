//! Synthetic panels whose target volatility is driven by the common cycle.

use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{month_range, write_csv_panel, Month, Panel, Standardizer};
use crate::error::{Error, Result};
use crate::model::{build_trend_cycle, simulate, stationary_companion_covariance, ModelShape, StateSpaceParams};

/// Knobs of the synthetic experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub shape: ModelShape,
    pub len: usize,
    pub seed: u64,
    pub start: Month,
    /// Leading AR coefficients of the common cycle, padded with zeros.
    pub cycle: Vec<f64>,
    /// Monthly return volatility at `ψ = 0`.
    pub vol_base: f64,
    /// Log-volatility sensitivity to a falling cycle.
    pub vol_slope: f64,
    /// Number of price targets, each with its own noise.
    pub n_targets: usize,
    /// Months of publication delay per macro series.
    pub publication_lags: Vec<usize>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        let mut lags = vec![0; 9];
        lags[2] = 1;
        lags[7] = 1;
        lags[8] = 1;
        Self {
            shape: ModelShape::baseline(12),
            len: 300,
            seed: 1,
            start: Month::new(1990, 1).expect("valid month"),
            cycle: vec![1.6, -0.7],
            vol_base: 0.01,
            vol_slope: 0.4,
            n_targets: 1,
            publication_lags: lags,
        }
    }
}

impl SyntheticConfig {
    pub fn target_ids(&self) -> Vec<String> {
        (1..=self.n_targets).map(|k| format!("PRICE{k}")).collect()
    }

    fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        if self.cycle.len() > self.shape.p {
            return Err(Error::Config(format!("{} cycle coefficients for p = {}", self.cycle.len(), self.shape.p)));
        }
        if self.publication_lags.len() != self.shape.n {
            return Err(Error::Config("one publication lag per macro series is required".into()));
        }
        if self.len < 30 || self.vol_base <= 0.0 {
            return Err(Error::Config("synthetic sample needs len >= 30 and positive volatility".into()));
        }
        Ok(())
    }
}

/// Data-generating parameters: persistent cycle loaded by every series,
/// slow trends, AR(1) idiosyncratic cycles.
pub fn synthetic_truth(shape: &ModelShape, cycle: &[f64]) -> Result<StateSpaceParams> {
    let (mut p, _) = build_trend_cycle(shape, &Standardizer::identity(shape.n))?;
    let mut coeffs = vec![0.0; shape.p];
    coeffs[..cycle.len()].copy_from_slice(cycle);
    p.set_cycle_coefficients(0, &coeffs);
    const LOADINGS: [f64; 8] = [0.8, 0.6, 0.9, 0.7, -0.8, 0.4, 0.5, 0.4];
    let c0 = shape.common_cycle_state();
    for i in 1..shape.n {
        p.b[(i, c0)] = LOADINGS[(i - 1) % LOADINGS.len()];
    }
    let cycle_var = 0.1;
    for cs in shape.cycle_starts().into_iter().skip(1) {
        let coeffs: Vec<f64> = (0..shape.p).map(|k| if k == 0 { 0.5 } else { 0.0 }).collect();
        p.set_cycle_coefficients(1, &coeffs);
        for &i in &shape.cycle_rows(1)[1..] {
            p.b[(i, cs)] = 0.5;
        }
    }
    let starts = shape.cycle_starts();
    for (k, &s) in shape.innovation_states().iter().enumerate() {
        p.sigma[k] = if s < shape.drift_start() {
            1e-3
        } else if s < shape.idio_start() {
            1e-6
        } else if starts.contains(&s) {
            cycle_var
        } else {
            0.2
        };
    }
    for i in 0..shape.n {
        let s = shape.idio_state(i);
        p.c[(s, s)] = 0.5;
    }
    let q = shape.q();
    let mut omega0 = DMatrix::identity(q, q) * 0.01;
    for i in 0..shape.n {
        let s = shape.idio_state(i);
        omega0[(s, s)] = 0.2 / 0.75;
    }
    for (c, &cs) in starts.iter().enumerate() {
        let v = stationary_companion_covariance(&p.cycle_coefficients(c), cycle_var);
        omega0.view_mut((cs, cs), (shape.p, shape.p)).copy_from(&v);
    }
    p.omega0 = omega0;
    Ok(p)
}

/// Simulated macro panel, price targets in levels and the latent cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticStudy {
    pub params: StateSpaceParams,
    /// Macro series followed by the targets, fully observed.
    pub panel: Panel,
    pub macro_ids: Vec<String>,
    pub target_ids: Vec<String>,
    /// True `ψ_1` for periods `1..=len`.
    pub psi: Vec<f64>,
    pub publication_lags: Vec<usize>,
}

/// Return volatility `vol_base · exp(-vol_slope · ψ)`.
pub fn volatility(config: &SyntheticConfig, psi: f64) -> f64 {
    config.vol_base * (-config.vol_slope * psi).exp()
}

pub fn simulate_study(config: &SyntheticConfig) -> Result<SyntheticStudy> {
    config.validate()?;
    let params = synthetic_truth(&config.shape, &config.cycle)?;
    let sim = simulate(&params, config.len, config.seed, config.start)?;
    let c0 = config.shape.common_cycle_state();
    let psi: Vec<f64> = (1..=config.len).map(|t| sim.states[(c0, t)]).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_7A26_E7B0_0000);
    let (n, k) = (config.shape.n, config.n_targets);
    let mut values = DMatrix::zeros(n + k, config.len);
    values.view_mut((0, 0), (n, config.len)).copy_from(sim.panel.raw());
    for j in 0..k {
        let mut level = 100.0;
        for t in 0..config.len {
            if t > 0 {
                let e: f64 = StandardNormal.sample(&mut rng);
                level *= 1.0 + volatility(config, psi[t]) * e;
            }
            values[(n + j, t)] = level;
        }
    }
    let macro_ids = config.shape.default_series_ids();
    let target_ids = config.target_ids();
    let ids: Vec<String> = macro_ids.iter().chain(&target_ids).cloned().collect();
    let panel = Panel::from_matrix(ids, month_range(config.start, config.len), values)?;
    Ok(SyntheticStudy { params, panel, macro_ids, target_ids, psi, publication_lags: config.publication_lags.clone() })
}

impl SyntheticStudy {
    /// Data as published at the end of period `s` (1-based): rows up to `s`,
    /// the last `lag_i` values of each macro series withheld.
    pub fn vintage(&self, s: usize) -> Panel {
        let cut = self.panel.truncate(s);
        let mut hidden = Vec::new();
        for (i, &lag) in self.publication_lags.iter().enumerate() {
            for t in s.saturating_sub(lag)..s {
                hidden.push((i, t));
            }
        }
        cut.with_missing(&hidden).with_vintage(self.panel.dates()[s - 1])
    }

    /// Write `count` consecutive vintages ending at the sample end into `dir`.
    pub fn write_vintages(&self, dir: &Path, count: usize) -> Result<Vec<Month>> {
        let len = self.panel.len();
        if count == 0 || count >= len {
            return Err(Error::Config(format!("cannot write {count} vintages from {len} periods")));
        }
        std::fs::create_dir_all(dir)?;
        let mut out = Vec::with_capacity(count);
        for s in len - count + 1..=len {
            let v = self.vintage(s);
            let date = self.panel.dates()[s - 1];
            write_csv_panel(&dir.join(format!("{date}.csv")), &v)?;
            out.push(date);
        }
        Ok(out)
    }

    /// Write the true cycle as `date,psi1`.
    pub fn write_truth(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["date", "psi1"])?;
        for (d, v) in self.panel.dates().iter().zip(&self.psi) {
            w.write_record([d.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{apply_transform, load_csv_panel, ColumnMap, TransformSpec};

    #[test]
    fn study_is_reproducible_and_causal() {
        let cfg = SyntheticConfig { len: 60, ..Default::default() };
        let a = simulate_study(&cfg).unwrap();
        let b = simulate_study(&cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.params.is_causal());
        assert_eq!(a.panel.n_series(), 10);
        assert_eq!(a.psi.len(), 60);
        let other = simulate_study(&SyntheticConfig { seed: 2, ..cfg }).unwrap();
        assert_ne!(a.psi, other.psi);
    }

    #[test]
    fn target_returns_follow_the_cycle() {
        let cfg = SyntheticConfig { len: 200, ..Default::default() };
        let s = simulate_study(&cfg).unwrap();
        let specs: Vec<TransformSpec> =
            (0..10).map(|i| if i == 9 { TransformSpec::MoMSquaredReturn } else { TransformSpec::Levels }).collect();
        let y = apply_transform(&s.panel, &specs).unwrap();
        assert!(y.get(9, 0).is_none());
        let x = s.panel.series(9);
        let (x0, x1) = (x[4].unwrap(), x[5].unwrap());
        assert!((y.get(9, 5).unwrap() - (100.0 * (x1 / x0 - 1.0)).powi(2)).abs() < 1e-9);
        assert!(volatility(&cfg, -1.0) > volatility(&cfg, 1.0));
    }

    #[test]
    fn vintages_have_a_ragged_edge() {
        let cfg = SyntheticConfig { len: 40, ..Default::default() };
        let s = simulate_study(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let dates = s.write_vintages(dir.path(), 5).unwrap();
        assert_eq!(dates.len(), 5);
        let last = load_csv_panel(&dir.path().join(format!("{}.csv", dates[4])), &ColumnMap::default()).unwrap();
        assert_eq!(last.len(), 40);
        assert!(last.get(7, 39).is_none());
        assert!(last.get(0, 39).is_some());
        assert!(last.get(9, 39).is_some());
        let first = load_csv_panel(&dir.path().join(format!("{}.csv", dates[0])), &ColumnMap::default()).unwrap();
        assert_eq!(first.len(), 36);
        assert_eq!(first.get(7, 34), s.panel.get(7, 34));
    }
}

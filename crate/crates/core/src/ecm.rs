//! Penalized ECM estimation of the trend-cycle model.
//!
//! One iteration runs the smoother, collects the sufficient statistics and
//! applies four conditional maximizations in order: initial conditions,
//! transition coefficients (then causality projection), innovation
//! variances, loadings. The low-level updates work on plain matrices so the
//! same code serves arbitrary free-coordinate sets.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::{observation_structure, ObservationMask, Panel, Standardizer};
use crate::error::{Error, Result};
use crate::kalman::{filter, smooth, LinearGaussian};
use crate::model::{
    build_trend_cycle, effective_penalty_weights, enforce_causality, stationary_companion_covariance, CoordPenalty,
    IndexSets, ModelShape, PenaltyConfig, StateSpaceParams, DEFAULT_CAUSALITY_MARGIN,
};
use crate::resample::artificial_jackknife;

/// Ridge penalty of the initialization regressions on standardized data.
pub const INIT_RIDGE: f64 = 1.0;
/// Floor for innovation variances.
pub const SIGMA_FLOOR: f64 = 1e-12;
/// Floor for initial trend variances.
pub const TREND_VARIANCE_FLOOR: f64 = 1e-8;
/// Variance given to drift initial conditions and innovations.
pub const DRIFT_VARIANCE: f64 = 1e-4;
/// Shortest sample accepted by [`initialize`].
pub const MIN_INIT_PERIODS: usize = 25;

/// `sign(x) max(|x| - c, 0)`.
pub fn soft_threshold(x: f64, c: f64) -> f64 {
    debug_assert!(c >= 0.0);
    if x > c {
        x - c
    } else if x < -c {
        x + c
    } else {
        0.0
    }
}

/// Free coordinates and innovation layout seen by the CM updates.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeStructure {
    /// States with an innovation; position `k` uses `Σ_k`.
    pub innovation: Vec<usize>,
    /// Free lower-triangular entries of `Ω_0`.
    pub omega0: Vec<(usize, usize)>,
    pub transition: Vec<CoordPenalty>,
    pub loadings: Vec<CoordPenalty>,
}

impl FreeStructure {
    pub fn for_shape(shape: &ModelShape, gamma: &PenaltyConfig, epsilon: f64) -> Self {
        let w = effective_penalty_weights(gamma, shape, epsilon);
        Self {
            innovation: shape.innovation_states(),
            omega0: IndexSets::new(shape).omega0,
            transition: w.transition,
            loadings: w.loadings,
        }
    }

    fn innovation_position(&self, state: usize) -> Option<usize> {
        self.innovation.iter().position(|&s| s == state)
    }
}

/// Expectations collected by the E-step.
#[derive(Debug, Clone)]
pub struct SufficientStats {
    /// Number of periods `s`.
    pub periods: usize,
    /// `Φ̂_0` and `P̂_0`.
    pub phi0: DVector<f64>,
    pub p0: DMatrix<f64>,
    /// `Ê = Φ̂_0 Φ̂_0' + P̂_0`.
    pub e: DMatrix<f64>,
    /// `Σ_t E[Φ_t Φ_t']` on the innovation rows and columns (`r x r`).
    pub f: DMatrix<f64>,
    /// `Σ_t E[Φ_t Φ_{t-1}']` on the innovation rows (`r x q`).
    pub g: DMatrix<f64>,
    /// `Σ_t E[Φ_{t-1} Φ_{t-1}']` (`q x q`).
    pub h: DMatrix<f64>,
    /// `Σ_t A_t' Z_t Φ̂_t'` (`n x q`).
    pub m: DMatrix<f64>,
    /// `Ô` summed over the periods in which each series is observed:
    /// since every `N̂_t = A_t'A_t` is a 0/1 diagonal, this is all the
    /// loading update needs.
    pub o_by_series: Vec<DMatrix<f64>>,
    /// `Σ_t Z_t' Z_t` over observed cells.
    pub zz: f64,
    /// Observed cell count.
    pub n_obs: usize,
    /// Observed-data log-likelihood at the parameters used.
    pub loglik: f64,
}

/// Smooth and assemble the sufficient statistics.
pub fn e_step(sys: &LinearGaussian, innovation: &[usize], panel: &Panel, mask: &ObservationMask) -> Result<SufficientStats> {
    let sm = smooth(sys, panel, mask)?;
    let q = sys.state_dim();
    let n = panel.n_series();
    let r = innovation.len();
    let s = sm.len();
    let second = |t: usize| &sm.mean[t] * sm.mean[t].transpose() + &sm.cov[t];

    let e = second(0);
    let mut f = DMatrix::zeros(r, r);
    let mut g = DMatrix::zeros(r, q);
    let mut h = DMatrix::zeros(q, q);
    let mut m = DMatrix::zeros(n, q);
    let mut o_by_series = vec![DMatrix::zeros(q, q); n];
    let mut zz = 0.0;
    let mut n_obs = 0;
    let mut prev = e.clone();
    for t in 1..=s {
        let cur = second(t);
        let cross = &sm.mean[t] * sm.mean[t - 1].transpose() + &sm.lag_cov[t - 1];
        for (a, &ia) in innovation.iter().enumerate() {
            for (b, &ib) in innovation.iter().enumerate() {
                f[(a, b)] += cur[(ia, ib)];
            }
            for j in 0..q {
                g[(a, j)] += cross[(ia, j)];
            }
        }
        h += &prev;
        for &i in mask.observed(t - 1) {
            let z = panel.get(i, t - 1).expect("observed cell");
            zz += z * z;
            n_obs += 1;
            for j in 0..q {
                m[(i, j)] += z * sm.mean[t][j];
            }
            o_by_series[i] += &cur;
        }
        prev = cur;
    }
    Ok(SufficientStats {
        periods: s,
        phi0: sm.mean[0].clone(),
        p0: sm.cov[0].clone(),
        e,
        f,
        g,
        h,
        m,
        o_by_series,
        zz,
        n_obs,
        loglik: sm.loglik,
    })
}

/// Initial-condition update: `μ_0 = Φ̂_0`, `Ω_0 = P̂_0` on the free pattern.
pub fn cm_update_initial_conditions(stats: &SufficientStats, omega0_free: &[(usize, usize)]) -> (DVector<f64>, DMatrix<f64>) {
    let q = stats.phi0.len();
    let mut omega = DMatrix::zeros(q, q);
    for &(i, j) in omega0_free {
        omega[(i, j)] = stats.p0[(i, j)];
        omega[(j, i)] = stats.p0[(i, j)];
    }
    (stats.phi0.clone(), omega)
}

/// Coordinate-wise transition update over the free set, in its order.
pub fn cm_update_transition(stats: &SufficientStats, c: &mut DMatrix<f64>, sigma: &[f64], st: &FreeStructure) -> Result<()> {
    let q = c.ncols();
    for cp in &st.transition {
        let (i, j) = cp.coord;
        let k = st
            .innovation_position(i)
            .ok_or_else(|| Error::Shape(format!("free transition row {i} has no innovation")))?;
        let inv = 1.0 / sigma[k];
        let mut cross = 0.0;
        for l in 0..q {
            if l != j {
                cross += c[(i, l)] * stats.h[(l, j)];
            }
        }
        let den = inv * stats.h[(j, j)] + cp.ridge;
        if !(den.abs() > 0.0) || !den.is_finite() {
            return Err(Error::DegenerateUpdate(format!("C[{i},{j}]")));
        }
        c[(i, j)] = soft_threshold(inv * (stats.g[(k, j)] - cross), cp.lasso) / den;
    }
    Ok(())
}

/// Innovation-variance update: diagonal of `(F - G C*' - C* G' + C* H C*') / s`.
pub fn cm_update_covariance(stats: &SufficientStats, c: &DMatrix<f64>, innovation: &[usize]) -> Result<Vec<f64>> {
    if stats.periods == 0 {
        return Err(Error::DegenerateUpdate("no periods for the covariance update".into()));
    }
    let cstar = c.select_rows(innovation.iter());
    let gc = &stats.g * cstar.transpose();
    let chc = &cstar * &stats.h * cstar.transpose();
    let s = stats.periods as f64;
    let mut out = Vec::with_capacity(innovation.len());
    for k in 0..innovation.len() {
        let v = (stats.f[(k, k)] - 2.0 * gc[(k, k)] + chc[(k, k)]) / s;
        if v < -1e-8 * (1.0 + stats.f[(k, k)].abs() / s) {
            return Err(Error::Numeric(format!("negative innovation variance {v} for state {}", innovation[k])));
        }
        out.push(v.max(SIGMA_FLOOR));
    }
    Ok(out)
}

/// Coordinate-wise loading update over the free set, in its order.
pub fn cm_update_loadings(stats: &SufficientStats, b: &mut DMatrix<f64>, st: &FreeStructure) -> Result<()> {
    let q = b.ncols();
    for cp in &st.loadings {
        let (i, j) = cp.coord;
        let o = &stats.o_by_series[i];
        let mut cross = 0.0;
        for l in 0..q {
            if l != j {
                cross += b[(i, l)] * o[(l, j)];
            }
        }
        let den = o[(j, j)] + cp.ridge;
        if !(den.abs() > 0.0) || !den.is_finite() {
            return Err(Error::DegenerateUpdate(format!("B[{i},{j}]")));
        }
        b[(i, j)] = soft_threshold(stats.m[(i, j)] - cross, cp.lasso) / den;
    }
    Ok(())
}

/// Elastic-net penalty in log-likelihood units.
pub fn penalty_value(c: &DMatrix<f64>, b: &DMatrix<f64>, st: &FreeStructure, epsilon: f64) -> f64 {
    let term = |v: f64, cp: &CoordPenalty| 0.5 * cp.ridge * v * v + cp.lasso * v.abs();
    let pc: f64 = st.transition.iter().map(|cp| term(c[cp.coord], cp)).sum();
    let pb: f64 = st.loadings.iter().map(|cp| term(b[cp.coord], cp)).sum();
    pc + pb / epsilon
}

/// Value of the penalized expected complete-data log-likelihood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    pub value: f64,
    /// `Ω_0` was singular and a pseudo-determinant was used.
    pub pseudo_determinant: bool,
}

/// Candidate parameters in matrix form.
#[derive(Debug, Clone, Copy)]
pub struct Candidate<'a> {
    pub mu0: &'a DVector<f64>,
    pub omega0: &'a DMatrix<f64>,
    pub c: &'a DMatrix<f64>,
    pub b: &'a DMatrix<f64>,
    pub sigma: &'a [f64],
    pub epsilon: f64,
}

impl<'a> Candidate<'a> {
    pub fn of(params: &'a StateSpaceParams) -> Self {
        Self {
            mu0: &params.mu0,
            omega0: &params.omega0,
            c: &params.c,
            b: &params.b,
            sigma: &params.sigma,
            epsilon: params.epsilon,
        }
    }
}

/// Penalized expected objective on fixed statistics, constants dropped.
pub fn penalized_expected_objective(cand: Candidate<'_>, stats: &SufficientStats, st: &FreeStructure) -> ObjectiveValue {
    // initial conditions
    let eig = cand.omega0.clone().symmetric_eigen();
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = lmax.max(1e-300) * 1e-12;
    let mut logdet = 0.0;
    let mut pseudo = false;
    let mut inv_diag = eig.eigenvalues.clone();
    for l in inv_diag.iter_mut() {
        if *l > tol {
            logdet += l.ln();
            *l = 1.0 / *l;
        } else {
            pseudo = true;
            *l = 0.0;
        }
    }
    let v = &eig.eigenvectors;
    let omega_inv = v * DMatrix::from_diagonal(&inv_diag) * v.transpose();
    let cross0 = &stats.phi0 * cand.mu0.transpose();
    let d0 = &stats.e - &cross0 - cross0.transpose() + cand.mu0 * cand.mu0.transpose();
    let init = -0.5 * logdet - 0.5 * (&omega_inv * d0).trace();

    // transition
    let cstar = cand.c.select_rows(st.innovation.iter());
    let gc = &stats.g * cstar.transpose();
    let chc = &cstar * &stats.h * cstar.transpose();
    let s = stats.periods as f64;
    let mut trans = 0.0;
    for (k, &sig) in cand.sigma.iter().enumerate() {
        let resid = stats.f[(k, k)] - 2.0 * gc[(k, k)] + chc[(k, k)];
        trans += -0.5 * s * sig.ln() - 0.5 * resid / sig;
    }

    // measurement
    let mut quad = stats.zz;
    for i in 0..cand.b.nrows() {
        let bi = cand.b.row(i);
        quad -= 2.0 * bi.dot(&stats.m.row(i));
        quad += (bi * &stats.o_by_series[i] * bi.transpose())[(0, 0)];
    }
    let meas = -0.5 * stats.n_obs as f64 * cand.epsilon.ln() - quad / (2.0 * cand.epsilon);

    let pen = penalty_value(cand.c, cand.b, st, cand.epsilon);
    ObjectiveValue { value: init + trans + meas - pen, pseudo_determinant: pseudo }
}

/// Stopping rule and iteration cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceConfig {
    pub max_iter: usize,
    pub median_tol: f64,
    pub q95_tol: f64,
    pub denominator_guard: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self { max_iter: 1000, median_tol: 1e-3, q95_tol: 1e-2, denominator_guard: 1e-4 }
    }
}

impl ConvergenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 || self.median_tol <= 0.0 || self.q95_tol <= 0.0 || self.denominator_guard <= 0.0 {
            return Err(Error::Config("convergence tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// One row of the iteration trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// Penalized observed-data log-likelihood at the iterate entering this sweep.
    pub objective: f64,
    pub median_relchange: f64,
    pub q95_relchange: f64,
    pub rho_common: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<IterationRecord>,
    pub warnings: Vec<String>,
    pub radii: Vec<f64>,
}

impl FitDiagnostics {
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "iter,objective,median_relchange,q95_relchange,rho_common")?;
        for r in &self.trace {
            writeln!(w, "{},{},{},{},{}", r.iter, r.objective, r.median_relchange, r.q95_relchange, r.rho_common)?;
        }
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut f)?;
        f.flush()?;
        Ok(())
    }
}

/// Linear-interpolation quantile of unsorted data.
pub(crate) fn quantile(values: &[f64], prob: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = prob * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

fn free_values(params: &StateSpaceParams, st: &FreeStructure) -> Vec<f64> {
    let mut v: Vec<f64> = st.transition.iter().map(|cp| params.c[cp.coord]).collect();
    v.extend(params.sigma.iter().copied());
    v.extend(st.loadings.iter().map(|cp| params.b[cp.coord]));
    v
}

/// Apply the four conditional maximizations to `params` on fixed statistics.
pub fn cm_sweep(params: &mut StateSpaceParams, stats: &SufficientStats, st: &FreeStructure, margin: f64) -> Result<()> {
    let (mu0, omega0) = cm_update_initial_conditions(stats, &st.omega0);
    params.mu0 = mu0;
    params.omega0 = omega0;
    cm_update_transition(stats, &mut params.c, &params.sigma, st)?;
    params.enforce_causality(margin);
    params.sigma = cm_update_covariance(stats, &params.c, &st.innovation)?;
    cm_update_loadings(stats, &mut params.b, st)?;
    params.check_finite()
}

/// Run ECM from `start` until the relative-change rule is met.
pub fn fit_from(
    start: StateSpaceParams,
    panel: &Panel,
    gamma: &PenaltyConfig,
    config: &ConvergenceConfig,
) -> Result<(StateSpaceParams, FitDiagnostics)> {
    gamma.validate()?;
    config.validate()?;
    if panel.n_series() != start.shape.n {
        return Err(Error::Shape(format!(
            "panel has {} series, model expects {}",
            panel.n_series(),
            start.shape.n
        )));
    }
    let mask = observation_structure(panel);
    let st = FreeStructure::for_shape(&start.shape, gamma, start.epsilon);
    let mut params = start;
    let mut diag = FitDiagnostics { iterations: 0, converged: false, trace: Vec::new(), warnings: Vec::new(), radii: Vec::new() };
    let mut last_obj: Option<f64> = None;
    for iter in 1..=config.max_iter {
        let sys = LinearGaussian::from_params(&params);
        let stats = e_step(&sys, &st.innovation, panel, &mask)?;
        let objective = stats.loglik - penalty_value(&params.c, &params.b, &st, params.epsilon);
        if let Some(prev) = last_obj {
            if objective < prev - 1e-6 {
                diag.warnings.push(format!("iteration {iter}: objective decreased by {:.3e}", prev - objective));
            }
        }
        last_obj = Some(objective);
        let old = free_values(&params, &st);
        cm_sweep(&mut params, &stats, &st, DEFAULT_CAUSALITY_MARGIN)?;
        let new = free_values(&params, &st);
        let rel: Vec<f64> = old
            .iter()
            .zip(&new)
            .map(|(o, n)| (n - o).abs() / (o.abs() + config.denominator_guard))
            .collect();
        let med = quantile(&rel, 0.5);
        let q95 = quantile(&rel, 0.95);
        diag.trace.push(IterationRecord {
            iter,
            objective,
            median_relchange: med,
            q95_relchange: q95,
            rho_common: params.cycle_radii()[0],
        });
        diag.iterations = iter;
        if med < config.median_tol && q95 < config.q95_tol {
            diag.converged = true;
            break;
        }
    }
    diag.radii = params.cycle_radii();
    Ok((params, diag))
}

/// Initialize and run ECM.
pub fn fit(
    panel: &Panel,
    shape: &ModelShape,
    eta: &Standardizer,
    gamma: &PenaltyConfig,
    config: &ConvergenceConfig,
) -> Result<(StateSpaceParams, FitDiagnostics)> {
    let start = initialize(panel, shape, eta)?;
    fit_from(start, panel, gamma, config)
}

/// Moving-average window `round(2√s + 1)`, forced odd.
pub fn trend_window(s: usize) -> usize {
    let w = (2.0 * (s as f64).sqrt() + 1.0).round() as usize;
    if w % 2 == 0 {
        w + 1
    } else {
        w
    }
}

/// Fill gaps by linear interpolation, extending the edge values outward.
pub fn interpolate_missing(x: &[Option<f64>]) -> Option<Vec<f64>> {
    let known: Vec<(usize, f64)> = x.iter().enumerate().filter_map(|(t, v)| v.map(|v| (t, v))).collect();
    if known.is_empty() {
        return None;
    }
    let mut out = vec![0.0; x.len()];
    let (first, last) = (known[0], known[known.len() - 1]);
    for (t, slot) in out.iter_mut().enumerate() {
        *slot = if t <= first.0 {
            first.1
        } else if t >= last.0 {
            last.1
        } else {
            let k = known.partition_point(|&(u, _)| u <= t);
            let (t0, v0) = known[k - 1];
            let (t1, v1) = known[k];
            v0 + (v1 - v0) * (t - t0) as f64 / (t1 - t0) as f64
        };
    }
    Some(out)
}

/// Centred moving average with the window clipped at the sample edges.
pub fn centered_moving_average(x: &[f64], w: usize) -> Vec<f64> {
    let half = w / 2;
    let mut prefix = vec![0.0; x.len() + 1];
    for (t, v) in x.iter().enumerate() {
        prefix[t + 1] = prefix[t] + v;
    }
    (0..x.len())
        .map(|t| {
            let lo = t.saturating_sub(half);
            let hi = (t + half + 1).min(x.len());
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len().max(1) as f64
}

fn sample_var(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

/// Ridge regression of `y` on the columns of `x`, no intercept.
pub(crate) fn ridge(x: &DMatrix<f64>, y: &DVector<f64>, penalty: f64) -> DVector<f64> {
    let k = x.ncols();
    let a = x.transpose() * x + DMatrix::identity(k, k) * penalty;
    let rhs = x.transpose() * y;
    match a.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => a.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(k)),
    }
}

/// Regress `y_t` on `(regs_t, regs_{t-1}, ..., regs_{t-lags+1})`.
fn lagged_ridge(y: &[f64], regs: &[f64], lags: usize, from_lag: usize, penalty: f64) -> (Vec<f64>, Vec<f64>) {
    let s = y.len();
    let start = lags - 1 + from_lag;
    let rows = s.saturating_sub(start);
    let x = DMatrix::from_fn(rows, lags, |r, k| regs[start + r - k - from_lag]);
    let yy = DVector::from_iterator(rows, (start..s).map(|t| y[t]));
    let coef = ridge(&x, &yy, penalty);
    let fitted = &x * &coef;
    let mut resid = vec![0.0; s];
    for r in 0..rows {
        resid[start + r] = yy[r] - fitted[r];
    }
    (coef.iter().copied().collect(), resid[start..].to_vec())
}

fn cycle_proxy(anchor: &[f64], others: &[&Vec<f64>]) -> Vec<f64> {
    if others.is_empty() {
        return anchor.to_vec();
    }
    let s = anchor.len();
    let x = DMatrix::from_fn(s, others.len(), |t, k| others[k][t]);
    let coef = ridge(&x, &DVector::from_column_slice(anchor), INIT_RIDGE);
    let fitted: Vec<f64> = (&x * coef).iter().copied().collect();
    if sample_var(&fitted) < 1e-6 * sample_var(anchor).max(1e-12) {
        anchor.to_vec()
    } else {
        fitted
    }
}

/// Starting values from moving-average trends and ridge regressions on
/// the detrended data.
pub fn initialize(panel: &Panel, shape: &ModelShape, eta: &Standardizer) -> Result<StateSpaceParams> {
    let (mut params, _) = build_trend_cycle(shape, eta)?;
    let s = panel.len();
    if panel.n_series() != shape.n {
        return Err(Error::Shape(format!("panel has {} series, model expects {}", panel.n_series(), shape.n)));
    }
    if s < MIN_INIT_PERIODS {
        return Err(Error::Domain(format!(
            "{s} periods are too few for initialization (need {MIN_INIT_PERIODS})"
        )));
    }
    let n = shape.n;
    let p = shape.p;
    let w = trend_window(s);
    let filled: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            interpolate_missing(&panel.series(i))
                .ok_or_else(|| Error::Domain(format!("series `{}` has no observations", panel.series_ids()[i])))
        })
        .collect::<Result<_>>()?;
    let ma: Vec<Vec<f64>> = filled.iter().map(|x| centered_moving_average(x, w)).collect();

    // trends
    let mut trends = Vec::with_capacity(shape.n_trends());
    for k in 0..shape.n_trends() {
        let members: Vec<usize> = (0..n).filter(|&i| shape.trend_of[i] == k).collect();
        let path: Vec<f64> = if members.len() == 1 {
            ma[members[0]].clone()
        } else {
            (0..s)
                .map(|t| {
                    let mut v: Vec<f64> = members.iter().map(|&i| eta.scales[i] * ma[i][t]).collect();
                    v.sort_by(|a, b| a.total_cmp(b));
                    let h = v.len() / 2;
                    if v.len() % 2 == 0 {
                        0.5 * (v[h - 1] + v[h])
                    } else {
                        v[h]
                    }
                })
                .collect()
        };
        trends.push(path);
    }
    let innov = shape.innovation_states();
    let pos = |state: usize| innov.iter().position(|&x| x == state).expect("innovation state");
    for (k, path) in trends.iter().enumerate() {
        let d: Vec<f64> = path.windows(2).map(|w| w[1] - w[0]).collect();
        let var = sample_var(&d).max(TREND_VARIANCE_FLOOR);
        params.sigma[pos(k)] = var;
        params.omega0[(k, k)] = var;
        let drift = shape.drifts.iter().position(|&x| x == k);
        if let Some(di) = drift {
            let ds = shape.drift_start() + di;
            let m = mean(&d);
            params.mu0[ds] = m;
            params.omega0[(ds, ds)] = DRIFT_VARIANCE;
            params.sigma[pos(ds)] = DRIFT_VARIANCE;
            params.mu0[k] = path[0] - m;
        } else {
            params.mu0[k] = path[0];
        }
    }

    // detrended data
    let x: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let k = shape.trend_of[i];
            let load = params.b[(i, k)];
            (0..s).map(|t| filled[i][t] - load * trends[k][t]).collect()
        })
        .collect();
    let mut resid: Vec<Vec<f64>> = x.clone();

    for (cyc, cs) in shape.cycle_starts().into_iter().enumerate() {
        let rows = shape.cycle_rows(cyc);
        let anchor = rows[0];
        let others: Vec<&Vec<f64>> = rows[1..].iter().map(|&i| &resid[i]).collect();
        let proxy = cycle_proxy(&resid[anchor], &others);
        let (ar, ar_resid) = lagged_ridge(&proxy, &proxy, p, 1, INIT_RIDGE);
        let ar = enforce_causality(&ar, DEFAULT_CAUSALITY_MARGIN);
        let var = sample_var(&ar_resid).max(TREND_VARIANCE_FLOOR);
        params.set_cycle_coefficients(cyc, &ar);
        params.sigma[pos(cs)] = var;
        let stat = stationary_companion_covariance(&ar, var);
        for a in 0..p {
            for b in 0..p {
                params.omega0[(cs + a, cs + b)] = stat[(a, b)];
            }
        }
        for (t, r) in resid[anchor].iter_mut().enumerate() {
            *r -= proxy[t];
        }
        for &i in &rows[1..] {
            let (coef, _) = lagged_ridge(&resid[i], &proxy, p, 0, INIT_RIDGE);
            for (k, &v) in coef.iter().enumerate() {
                params.b[(i, cs + k)] = v;
            }
            for t in 0..s {
                let fit: f64 = (0..p).filter(|&k| t >= k).map(|k| coef[k] * proxy[t - k]).sum();
                resid[i][t] -= fit;
            }
        }
    }

    for (i, e) in resid.iter().enumerate() {
        let st = shape.idio_state(i);
        let (coef, r) = lagged_ridge(e, e, 1, 1, INIT_RIDGE);
        let pi = enforce_causality(&coef, DEFAULT_CAUSALITY_MARGIN)[0];
        let var = sample_var(&r).max(TREND_VARIANCE_FLOOR);
        params.c[(st, st)] = pi;
        params.sigma[pos(st)] = var;
        params.omega0[(st, st)] = var / (1.0 - pi * pi);
    }
    params.check_finite()?;
    Ok(params)
}

/// Candidate hyperparameters and forecast-error weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionGrid {
    pub p: Vec<usize>,
    pub lambda: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Weight of each series in the forecast-error criterion.
    pub target_weights: Vec<f64>,
}

/// `count` log-spaced points on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count).map(|k| (a + (b - a) * k as f64 / (count - 1) as f64).exp()).collect()
}

/// `count` evenly spaced points on `[lo, hi]`.
pub fn linear_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    (0..count).map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64).collect()
}

pub const LAMBDA_RANGE: (f64, f64) = (1e-2, 2.5);
pub const ALPHA_RANGE: (f64, f64) = (0.0, 1.0);
pub const BETA_RANGE: (f64, f64) = (1.0, 1.2);

impl SelectionGrid {
    /// Default discretization: 4 log-spaced `λ`, 3 `α`, 2 `β`, `p = 12`.
    /// The criterion weights RPCE with 1; without it every series counts.
    pub fn default_for(series_ids: &[String]) -> Self {
        let target_weights = match series_ids.iter().position(|s| s == "RPCE") {
            Some(k) => (0..series_ids.len()).map(|i| if i == k { 1.0 } else { 0.0 }).collect(),
            None => vec![1.0; series_ids.len()],
        };
        Self {
            p: vec![crate::model::BASELINE_LAGS],
            lambda: log_grid(LAMBDA_RANGE.0, LAMBDA_RANGE.1, 4),
            alpha: linear_grid(ALPHA_RANGE.0, ALPHA_RANGE.1, 3),
            beta: linear_grid(BETA_RANGE.0, BETA_RANGE.1, 2),
            target_weights,
        }
    }

    /// Candidates in lexicographic `(p, λ, α, β)` order.
    pub fn candidates(&self) -> Vec<(usize, PenaltyConfig)> {
        let mut out = Vec::new();
        let mut ps = self.p.clone();
        ps.sort_unstable();
        let sorted = |v: &Vec<f64>| {
            let mut v = v.clone();
            v.sort_by(|a, b| a.total_cmp(b));
            v
        };
        let (ls, als, bs) = (sorted(&self.lambda), sorted(&self.alpha), sorted(&self.beta));
        for &lambda in &ls {
            for &alpha in &als {
                for &beta in &bs {
                    for &p in &ps {
                        out.push((p, PenaltyConfig { lambda, alpha, beta }));
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.p.is_empty() || self.lambda.is_empty() || self.alpha.is_empty() || self.beta.is_empty() {
            return Err(Error::Config("selection grid has an empty axis".into()));
        }
        if self.target_weights.len() != n || self.target_weights.iter().all(|&w| w == 0.0) {
            return Err(Error::Config("target weights must cover every series and not all be zero".into()));
        }
        for (_, g) in self.candidates() {
            g.validate()?;
        }
        Ok(())
    }
}

/// Jackknife settings used inside the selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionSubsampler {
    pub j: usize,
    /// Share of observed estimation-half cells removed in each subsample.
    pub d_fraction: f64,
    pub seed: u64,
}

impl Default for SelectionSubsampler {
    fn default() -> Self {
        Self { j: 10, d_fraction: 0.2, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScore {
    pub p: usize,
    pub gamma: PenaltyConfig,
    /// Mean weighted squared one-step error over subsamples, `None` on failure.
    pub score: Option<f64>,
    /// Per-subsample errors.
    pub errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub p: usize,
    pub gamma: PenaltyConfig,
    pub scores: Vec<CandidateScore>,
}

/// Weighted squared one-step prediction errors on periods `from..s`.
pub fn one_step_errors(params: &StateSpaceParams, panel: &Panel, from: usize, weights: &[f64]) -> Result<f64> {
    let sys = LinearGaussian::from_params(params);
    let mask = observation_structure(panel);
    let f = filter(&sys, panel, &mask)?;
    let mut total = 0.0;
    let mut count = 0.0;
    for t in from + 1..=panel.len() {
        let pred = &params.b * &f.predicted_mean[t];
        for &i in mask.observed(t - 1) {
            if weights[i] != 0.0 {
                let e = panel.get(i, t - 1).unwrap() - pred[i];
                total += weights[i] * e * e;
                count += weights[i];
            }
        }
    }
    if count == 0.0 {
        return Err(Error::Selection("no weighted observations in the validation half".into()));
    }
    Ok(total / count)
}

/// Choose `(p, γ)` by jackknife pseudo out-of-sample error.
///
/// Each subsample hides `d` observed cells of the first half; the model is
/// estimated on that half and scored on one-step forecasts over the second.
pub fn select_hyperparameters(
    panel: &Panel,
    shape: &ModelShape,
    eta: &Standardizer,
    grid: &SelectionGrid,
    sub: &SelectionSubsampler,
    config: &ConvergenceConfig,
) -> Result<SelectionResult> {
    grid.validate(shape.n)?;
    let half = panel.len() / 2;
    let est = panel.truncate(half);
    let cells: Vec<(usize, usize)> =
        (0..half).flat_map(|t| (0..shape.n).map(move |i| (i, t))).filter(|&(i, t)| est.is_observed(i, t)).collect();
    let d = ((sub.d_fraction * cells.len() as f64).round() as usize).clamp(1, cells.len().saturating_sub(1).max(1));
    let masks = artificial_jackknife(cells.len(), d, sub.j, sub.seed)?;
    let candidates = grid.candidates();
    let jobs: Vec<(usize, usize)> = (0..candidates.len()).flat_map(|c| (0..masks.len()).map(move |m| (c, m))).collect();
    let results: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(ci, mi)| {
            let (p, gamma) = candidates[ci];
            let hidden: Vec<(usize, usize)> = masks[mi].iter().map(|&k| cells[k]).collect();
            let masked_full = panel.with_missing(&hidden);
            let masked_est = masked_full.truncate(half);
            let (params, _) = fit(&masked_est, &shape.with_lags(p), eta, &gamma, config)?;
            one_step_errors(&params, &masked_full, half, &grid.target_weights)
        })
        .collect();
    let mut scores = Vec::with_capacity(candidates.len());
    let mut failures = Vec::new();
    for (ci, &(p, gamma)) in candidates.iter().enumerate() {
        let mut errors = Vec::new();
        let mut failed = None;
        for mi in 0..masks.len() {
            match &results[ci * masks.len() + mi] {
                Ok(e) if e.is_finite() => errors.push(*e),
                Ok(e) => failed = Some(format!("non-finite error {e}")),
                Err(e) => failed = Some(e.to_string()),
            }
        }
        let score = match failed {
            None => Some(mean(&errors)),
            Some(msg) => {
                failures.push(format!("p={p} λ={} α={} β={}: {msg}", gamma.lambda, gamma.alpha, gamma.beta));
                None
            }
        };
        scores.push(CandidateScore { p, gamma, score, errors });
    }
    let mut best: Option<&CandidateScore> = None;
    for c in &scores {
        if let Some(s) = c.score {
            if best.is_none_or(|b| s < b.score.unwrap()) {
                best = Some(c);
            }
        }
    }
    match best {
        Some(b) => Ok(SelectionResult { p: b.p, gamma: b.gamma, scores: scores.clone() }),
        None => Err(Error::Selection(failures.join("; "))),
    }
}

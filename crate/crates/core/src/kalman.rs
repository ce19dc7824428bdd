//! Missing-data Kalman filter, fixed-interval smoother and state forecasts.
//!
//! Period `t = 1..s` uses panel column `t - 1`; index 0 of every sequence
//! holds the prior `(μ_0, Ω_0)`. Missing cells are dropped by row
//! selection, so a period without observations gets a time update only.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::data::{Month, ObservationMask, Panel};
use crate::error::{Error, Result};
use crate::model::StateSpaceParams;

/// Generic linear-Gaussian system with isotropic measurement noise.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussian {
    pub mu0: DVector<f64>,
    pub omega0: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub epsilon: f64,
}

impl LinearGaussian {
    pub fn from_params(params: &StateSpaceParams) -> Self {
        Self {
            mu0: params.mu0.clone(),
            omega0: params.omega0.clone(),
            c: params.c.clone(),
            q: params.q_matrix(),
            b: params.b.clone(),
            epsilon: params.epsilon,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.mu0.len()
    }

    fn check(&self, panel: &Panel, mask: &ObservationMask) -> Result<()> {
        let q = self.state_dim();
        if self.omega0.shape() != (q, q) || self.c.shape() != (q, q) || self.q.shape() != (q, q) || self.b.ncols() != q
        {
            return Err(Error::Shape("inconsistent system matrices".into()));
        }
        if self.b.nrows() != panel.n_series() || mask.n_series() != panel.n_series() || mask.len() != panel.len() {
            return Err(Error::Shape(format!(
                "panel has {} series over {} periods, model expects {} series",
                panel.n_series(),
                panel.len(),
                self.b.nrows()
            )));
        }
        let finite = self.mu0.iter().chain(self.omega0.iter()).chain(self.c.iter()).chain(self.q.iter()).chain(self.b.iter())
            .all(|v| v.is_finite())
            && self.epsilon.is_finite();
        if !finite {
            return Err(Error::Numeric("non-finite values in state-space parameters".into()));
        }
        Ok(())
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Forward-pass moments.
#[derive(Debug, Clone)]
pub struct FilterOutput {
    /// `Φ_{t|t-1}`; index 0 is `μ_0`.
    pub predicted_mean: Vec<DVector<f64>>,
    pub predicted_cov: Vec<DMatrix<f64>>,
    /// `Φ_{t|t}`; index 0 is `μ_0`.
    pub filtered_mean: Vec<DVector<f64>>,
    pub filtered_cov: Vec<DMatrix<f64>>,
    pub loglik: f64,
}

impl FilterOutput {
    pub fn len(&self) -> usize {
        self.filtered_mean.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Run the filter over every period of `panel`.
pub fn filter(sys: &LinearGaussian, panel: &Panel, mask: &ObservationMask) -> Result<FilterOutput> {
    sys.check(panel, mask)?;
    let s = panel.len();
    let q = sys.state_dim();
    let ct = sys.c.transpose();
    let mut out = FilterOutput {
        predicted_mean: Vec::with_capacity(s + 1),
        predicted_cov: Vec::with_capacity(s + 1),
        filtered_mean: Vec::with_capacity(s + 1),
        filtered_cov: Vec::with_capacity(s + 1),
        loglik: 0.0,
    };
    let mut p0 = sys.omega0.clone();
    symmetrize(&mut p0);
    out.predicted_mean.push(sys.mu0.clone());
    out.predicted_cov.push(p0.clone());
    out.filtered_mean.push(sys.mu0.clone());
    out.filtered_cov.push(p0);

    for t in 1..=s {
        let prev_m = &out.filtered_mean[t - 1];
        let prev_p = &out.filtered_cov[t - 1];
        let m_pred = &sys.c * prev_m;
        let mut p_pred = &sys.c * prev_p * &ct + &sys.q;
        symmetrize(&mut p_pred);

        let rows = mask.observed(t - 1);
        let (m_filt, p_filt) = if rows.is_empty() {
            (m_pred.clone(), p_pred.clone())
        } else {
            let k = rows.len();
            let h = sys.b.select_rows(rows.iter());
            let z = panel.observed_vector(t - 1, rows);
            let v = z - &h * &m_pred;
            let ph = &p_pred * h.transpose();
            let mut f = &h * &ph;
            for d in 0..k {
                f[(d, d)] += sys.epsilon;
            }
            symmetrize(&mut f);
            let chol = f.clone().cholesky().ok_or(Error::Conditioning { period: t })?;
            let logdet: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
            let finv_v = chol.solve(&v);
            out.loglik += -0.5 * (k as f64 * (2.0 * PI).ln() + logdet + v.dot(&finv_v));
            // K = P H' F^{-1}
            let gain = chol.solve(&ph.transpose()).transpose();
            let m = &m_pred + &gain * v;
            let ikh = DMatrix::<f64>::identity(q, q) - &gain * &h;
            let mut p = &ikh * &p_pred * ikh.transpose() + (&gain * gain.transpose()) * sys.epsilon;
            symmetrize(&mut p);
            (m, p)
        };
        out.predicted_mean.push(m_pred);
        out.predicted_cov.push(p_pred);
        out.filtered_mean.push(m_filt);
        out.filtered_cov.push(p_filt);
    }
    if !out.loglik.is_finite() {
        return Err(Error::Numeric("non-finite log-likelihood".into()));
    }
    Ok(out)
}

/// Pseudo-inverse fallback used when a predicted covariance is singular.
fn solve_psd(a: &DMatrix<f64>, rhs: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = a.clone().cholesky() {
        let x = ch.solve(rhs);
        if x.iter().all(|v| v.is_finite()) {
            return x;
        }
    }
    let eig = a.clone().symmetric_eigen();
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = lmax * 1e-12 * a.nrows() as f64;
    let mut d = eig.eigenvalues.clone();
    d.iter_mut().for_each(|l| *l = if *l > tol { 1.0 / *l } else { 0.0 });
    let v = &eig.eigenvectors;
    v * DMatrix::from_diagonal(&d) * v.transpose() * rhs
}

/// Smoother gain `J_{t-1} = P_{t-1|t-1} C' P_{t|t-1}^{-1}` for `t = 1..s`
/// (stored at index `t - 1`).
pub fn smoother_gains(sys: &LinearGaussian, f: &FilterOutput) -> Vec<DMatrix<f64>> {
    (1..=f.len())
        .map(|t| {
            // P_pred J' = C P_filt
            let rhs = &sys.c * &f.filtered_cov[t - 1];
            solve_psd(&f.predicted_cov[t], &rhs).transpose()
        })
        .collect()
}

/// Fixed-interval smoother moments.
#[derive(Debug, Clone)]
pub struct SmootherOutput {
    /// `Φ̂_t` for `t = 0..s`.
    pub mean: Vec<DVector<f64>>,
    /// `P̂_t` for `t = 0..s`.
    pub cov: Vec<DMatrix<f64>>,
    /// `P̂_{t,t-1}` for `t = 1..s`, stored at index `t - 1`.
    pub lag_cov: Vec<DMatrix<f64>>,
    pub loglik: f64,
    pub filtered: FilterOutput,
}

impl SmootherOutput {
    pub fn len(&self) -> usize {
        self.mean.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Smoothed path of one state coordinate for `t = 1..s`.
    pub fn state_path(&self, state: usize) -> Vec<f64> {
        self.mean[1..].iter().map(|m| m[state]).collect()
    }
}

/// Rauch–Tung–Striebel smoother including the `t = 0` moments.
pub fn smooth(sys: &LinearGaussian, panel: &Panel, mask: &ObservationMask) -> Result<SmootherOutput> {
    let f = filter(sys, panel, mask)?;
    let s = f.len();
    let gains = smoother_gains(sys, &f);
    let mut mean = f.filtered_mean.clone();
    let mut cov = f.filtered_cov.clone();
    let mut lag_cov = vec![DMatrix::zeros(sys.state_dim(), sys.state_dim()); s];
    for t in (1..=s).rev() {
        let j = &gains[t - 1];
        let m = &f.filtered_mean[t - 1] + j * (&mean[t] - &f.predicted_mean[t]);
        let mut p = &f.filtered_cov[t - 1] + j * (&cov[t] - &f.predicted_cov[t]) * j.transpose();
        symmetrize(&mut p);
        lag_cov[t - 1] = &cov[t] * j.transpose();
        mean[t - 1] = m;
        cov[t - 1] = p;
    }
    Ok(SmootherOutput { mean, cov, lag_cov, loglik: f.loglik, filtered: f })
}

pub fn smooth_params(params: &StateSpaceParams, panel: &Panel, mask: &ObservationMask) -> Result<SmootherOutput> {
    smooth(&LinearGaussian::from_params(params), panel, mask)
}

/// Out-of-sample mean forecasts of the state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateForecast {
    /// `C^j Φ` for `j = 1..h`.
    pub means: Vec<DVector<f64>>,
    /// Common-cycle coordinate of each forecast.
    pub cycle: Vec<f64>,
}

/// Mean forecasts `C^j Φ̂_{s|s}` for `j = 1..h`.
pub fn forecast_states(c: &DMatrix<f64>, state: &DVector<f64>, cycle_state: usize, h: usize) -> StateForecast {
    let mut means = Vec::with_capacity(h);
    let mut cur = state.clone();
    for _ in 0..h {
        cur = c * cur;
        means.push(cur.clone());
    }
    let cycle = means.iter().map(|m| m[cycle_state]).collect();
    StateForecast { means, cycle }
}

/// Real-time views of one cycle: for every period `t`, the estimates
/// `ψ̂_{t+j|t}` for `j = -back..=fwd`, each using only data up to `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleViews {
    pub back: usize,
    pub fwd: usize,
    /// Row `t - 1` holds the views formed at period `t`, ordered by `j`.
    pub views: Vec<Vec<f64>>,
}

impl CycleViews {
    /// `ψ̂_{t+j|t}` for period `t` (1-based).
    pub fn get(&self, t: usize, j: i64) -> f64 {
        self.views[t - 1][(j + self.back as i64) as usize]
    }
}

/// Real-time cycle estimates from one forward pass.
///
/// `lags` is the number of lagged copies of the cycle kept in the state
/// starting at `cycle_state`; older values come from a backward mean
/// recursion truncated at `t`, forecasts from powers of `C`.
pub fn realtime_cycle_views(
    sys: &LinearGaussian,
    panel: &Panel,
    mask: &ObservationMask,
    cycle_state: usize,
    lags: usize,
    back: usize,
    fwd: usize,
) -> Result<CycleViews> {
    let f = filter(sys, panel, mask)?;
    let s = f.len();
    let need_backward = back + 1 > lags;
    let gains = if need_backward { smoother_gains(sys, &f) } else { Vec::new() };
    let mut views = Vec::with_capacity(s);
    for t in 1..=s {
        let mut row = vec![f64::NAN; back + 1 + fwd];
        let now = &f.filtered_mean[t];
        for k in 0..=back.min(lags - 1) {
            row[back - k] = now[cycle_state + k];
        }
        if need_backward {
            // m_{u|t} = m_{u|u} + J_u (m_{u+1|t} - m_{u+1|u})
            let mut m = now.clone();
            let mut u = t;
            while u > 0 && t - (u - 1) + lags - 1 <= back {
                m = &f.filtered_mean[u - 1] + &gains[u - 1] * (&m - &f.predicted_mean[u]);
                u -= 1;
                row[back - (t - u + lags - 1)] = m[cycle_state + lags - 1];
            }
            for k in lags..=back {
                if row[back - k].is_nan() {
                    // before the sample start: fall back to the earliest estimate
                    row[back - k] = m[cycle_state + lags - 1];
                }
            }
        }
        let fc = forecast_states(&sys.c, now, cycle_state, fwd);
        row[back + 1..].copy_from_slice(&fc.cycle);
        views.push(row);
    }
    Ok(CycleViews { back, fwd, views })
}

/// Write `date,psi1_smoothed`.
pub fn write_cycle_csv(path: &Path, dates: &[Month], psi: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["date", "psi1_smoothed"])?;
    for (d, v) in dates.iter().zip(psi) {
        w.write_record([d.to_string(), format!("{v}")])?;
    }
    w.flush()?;
    Ok(())
}

//! Fixtures shared by the unit, integration and acceptance suites.
//!
//! Random systems and panels, an exact joint-Gaussian conditioning oracle
//! for the filter and smoother, toy penalty structures and a brute-force
//! CART search.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{month_range, Month, Panel, Standardizer};
use crate::ecm::FreeStructure;
use crate::kalman::LinearGaussian;
use crate::model::{build_trend_cycle, CoordPenalty, ModelShape, PenaltyConfig, StateSpaceParams};
use crate::tree::{BinaryTree, PredictorWindow, SplitLabel};

pub fn random_system(rng: &mut ChaCha8Rng, q: usize, n: usize, eps: f64) -> LinearGaussian {
    let mut rand_mat = |r: usize, c: usize, s: f64| DMatrix::from_fn(r, c, |_, _| rng.random_range(-s..s));
    let c = rand_mat(q, q, 0.6);
    let a = rand_mat(q, q, 1.0);
    let qm = &a * a.transpose() + DMatrix::identity(q, q) * 0.1;
    let a0 = rand_mat(q, q, 1.0);
    let omega0 = &a0 * a0.transpose() + DMatrix::identity(q, q) * 0.2;
    let b = rand_mat(n, q, 1.5);
    let mu0 = DVector::from_iterator(q, rand_mat(q, 1, 1.0).iter().copied());
    LinearGaussian { mu0, omega0, c, q: qm, b, epsilon: eps }
}

/// Random system with diagonal innovation covariance; returns its diagonal.
pub fn diag_system(rng: &mut ChaCha8Rng, q: usize, n: usize, eps: f64) -> (LinearGaussian, Vec<f64>) {
    let mut sys = random_system(rng, q, n, eps);
    let sigma: Vec<f64> = (0..q).map(|_| rng.random_range(0.2..1.5)).collect();
    sys.q = DMatrix::from_diagonal(&DVector::from_vec(sigma.clone()));
    (sys, sigma)
}

/// Uniform panel with each cell missing with probability `miss`.
pub fn random_panel(rng: &mut ChaCha8Rng, n: usize, len: usize, miss: f64) -> Panel {
    let vals = DMatrix::from_fn(n, len, |_, _| {
        if rng.random::<f64>() < miss {
            f64::NAN
        } else {
            rng.random_range(-3.0..3.0)
        }
    });
    let ids = (0..n).map(|i| format!("Z{i}")).collect();
    Panel::from_matrix(ids, month_range(Month::new(2000, 1).expect("valid month"), len), vals)
        .expect("consistent panel")
}

/// Exact conditioning of the stacked Gaussian `(Φ_0..Φ_T, Z_obs)`.
pub struct JointOracle {
    q: usize,
    mean_x: DVector<f64>,
    cov_x: DMatrix<f64>,
    obs: Vec<(usize, usize)>,
    z: DVector<f64>,
    h: DMatrix<f64>,
    eps: f64,
}

impl JointOracle {
    pub fn new(sys: &LinearGaussian, panel: &Panel) -> Self {
        let q = sys.state_dim();
        let s = panel.len();
        let dim = q * (s + 1);
        let mut mean_x = DVector::zeros(dim);
        let mut cov_x = DMatrix::zeros(dim, dim);
        let mut m = sys.mu0.clone();
        let mut v = sys.omega0.clone();
        for t in 0..=s {
            if t > 0 {
                m = &sys.c * m;
                v = &sys.c * v * sys.c.transpose() + &sys.q;
            }
            mean_x.rows_mut(t * q, q).copy_from(&m);
            // Cov(Φ_u, Φ_t) = C^{u-t} V_t for u >= t
            let mut block = v.clone();
            for u in t..=s {
                if u > t {
                    block = &sys.c * block;
                }
                cov_x.view_mut((u * q, t * q), (q, q)).copy_from(&block);
                cov_x.view_mut((t * q, u * q), (q, q)).copy_from(&block.transpose());
            }
        }
        let mut obs = Vec::new();
        for t in 1..=s {
            for i in 0..panel.n_series() {
                if panel.is_observed(i, t - 1) {
                    obs.push((t, i));
                }
            }
        }
        let z = DVector::from_iterator(obs.len(), obs.iter().map(|&(t, i)| panel.get(i, t - 1).unwrap()));
        let mut h = DMatrix::zeros(obs.len(), dim);
        for (k, &(t, i)) in obs.iter().enumerate() {
            for l in 0..q {
                h[(k, t * q + l)] = sys.b[(i, l)];
            }
        }
        Self { q, mean_x, cov_x, obs, z, h, eps: sys.epsilon }
    }

    /// Posterior mean and covariance of the stacked states given the
    /// observations dated `<= upto`.
    pub fn condition(&self, upto: usize) -> (DVector<f64>, DMatrix<f64>) {
        let keep: Vec<usize> = (0..self.obs.len()).filter(|&k| self.obs[k].0 <= upto).collect();
        if keep.is_empty() {
            return (self.mean_x.clone(), self.cov_x.clone());
        }
        let h = self.h.select_rows(keep.iter());
        let z = self.z.select_rows(keep.iter());
        let sxz = &self.cov_x * h.transpose();
        let szz = &h * &sxz + DMatrix::identity(keep.len(), keep.len()) * self.eps;
        let inv = szz.clone().try_inverse().expect("positive definite");
        let mean = &self.mean_x + &sxz * &inv * (z - &h * &self.mean_x);
        let cov = &self.cov_x - &sxz * &inv * sxz.transpose();
        (mean, cov)
    }

    pub fn loglik(&self) -> f64 {
        let k = self.obs.len();
        if k == 0 {
            return 0.0;
        }
        let szz = &self.h * &self.cov_x * self.h.transpose() + DMatrix::identity(k, k) * self.eps;
        let v = &self.z - &self.h * &self.mean_x;
        let ch = szz.cholesky().expect("positive definite");
        let logdet = 2.0 * ch.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        -0.5 * (k as f64 * (2.0 * PI).ln() + logdet + v.dot(&ch.solve(&v)))
    }

    pub fn block_mean(&self, mean: &DVector<f64>, t: usize) -> DVector<f64> {
        mean.rows(t * self.q, self.q).into_owned()
    }

    pub fn block_cov(&self, cov: &DMatrix<f64>, t: usize, u: usize) -> DMatrix<f64> {
        cov.view((t * self.q, u * self.q), (self.q, self.q)).into_owned()
    }
}

/// Toy system with every entry of `C` and `B` free.
pub fn toy_structure(q: usize, n: usize, gamma: &PenaltyConfig, eps: f64) -> FreeStructure {
    let (ridge, lasso) = (1.0 - gamma.alpha, gamma.alpha / 2.0);
    let cp = |i, j, scale: f64| CoordPenalty {
        coord: (i, j),
        base: gamma.lambda,
        ridge: ridge * gamma.lambda * scale,
        lasso: lasso * gamma.lambda * scale,
    };
    let mut omega0 = Vec::new();
    for j in 0..q {
        for i in j..q {
            omega0.push((i, j));
        }
    }
    FreeStructure {
        innovation: (0..q).collect(),
        omega0,
        transition: (0..q).flat_map(|i| (0..q).map(move |j| (i, j))).map(|(i, j)| cp(i, j, 1.0)).collect(),
        loadings: (0..n).flat_map(|i| (0..q).map(move |j| (i, j))).map(|(i, j)| cp(i, j, eps)).collect(),
    }
}

/// Three series, AR(2) common cycle loaded by series 2 and 3, one trend drift.
pub fn reduced_truth() -> StateSpaceParams {
    let shape = ModelShape::independent_trends(3, 2, vec![1]).expect("valid shape");
    let (mut p, _) = build_trend_cycle(&shape, &Standardizer::identity(3)).expect("valid template");
    p.set_cycle_coefficients(0, &[1.2, -0.4]);
    let cs = shape.common_cycle_state();
    p.b[(1, cs)] = 0.8;
    p.b[(2, cs)] = -0.5;
    p.b[(2, cs + 1)] = 0.3;
    let innov = shape.innovation_states();
    for (k, &s) in innov.iter().enumerate() {
        p.sigma[k] = match s {
            0..=2 => 0.002,
            3 => 1e-5,
            s if s == cs => 0.5,
            _ => 0.1,
        };
    }
    for i in 0..3 {
        let s = shape.idio_state(i);
        p.c[(s, s)] = 0.3;
    }
    p.mu0[3] = 0.01;
    p.omega0 = DMatrix::identity(shape.q(), shape.q()) * 0.1;
    p
}

pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let (ma, mb) = (mean(a), mean(b));
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Depth-3 tree over `m = 3`, `p = 2` with leaves 3, 4, 6, 7.
pub fn sample_tree() -> BinaryTree {
    let labels = BTreeMap::from([
        (1, SplitLabel { feature: 3, lag: 2, threshold: 1.5 }),
        (2, SplitLabel { feature: 2, lag: 1, threshold: 10.0 }),
        (5, SplitLabel { feature: 1, lag: 1, threshold: 5.0 }),
    ]);
    let values = BTreeMap::from([(3, 30.0), (4, 40.0), (6, 60.0), (7, 70.0)]);
    BinaryTree::from_parts(
        &[1, 2, 3, 4, 5, 6, 7],
        &[(1, 2), (1, 3), (2, 4), (2, 5), (5, 6), (5, 7)],
        &labels,
        &values,
        1.0,
        3,
        2,
    )
    .expect("valid tree")
}

/// Window at t = T of the 3 x 3 data matrix: lag 1 is X_2, lag 2 is X_1.
pub fn example_window() -> PredictorWindow {
    PredictorWindow::from_lags(&[vec![4.5, 10.0, 2.0], vec![5.0, 12.0, 0.5]]).expect("valid window")
}

/// Gridded predictors with a step in `(1, 1)` and a smooth effect of `(2, 2)`.
pub fn random_data(rng: &mut ChaCha8Rng, rows: usize, m: usize, p: usize) -> (Vec<f64>, Vec<PredictorWindow>) {
    let windows: Vec<PredictorWindow> = (0..rows)
        .map(|_| {
            let lags: Vec<Vec<f64>> =
                (0..p).map(|_| (0..m).map(|_| (rng.random_range(0..20) as f64) / 4.0).collect()).collect();
            PredictorWindow::from_lags(&lags).expect("valid window")
        })
        .collect();
    let y = windows
        .iter()
        .map(|w| (w.get(1, 1) > 2.0) as u8 as f64 * 2.0 + w.get(2, 2).sin() + rng.random_range(-0.5..0.5))
        .collect();
    (y, windows)
}

/// Direct greedy search: every (feature, lag, midpoint) scored by
/// recomputing both child SSEs from scratch.
pub fn brute_force_sse(y: &[f64], w: &[PredictorWindow], idx: Vec<usize>, min_leaf: usize) -> f64 {
    let sse_of = |set: &[usize]| {
        let mean = set.iter().map(|&i| y[i]).sum::<f64>() / set.len() as f64;
        set.iter().map(|&i| (y[i] - mean).powi(2)).sum::<f64>()
    };
    let here = sse_of(&idx);
    if idx.len() < 2 * min_leaf || here <= 0.0 {
        return here;
    }
    let mut best: Option<(f64, usize, usize, f64)> = None;
    for f in 1..=w[0].m() {
        for l in 1..=w[0].p_lags() {
            let mut vals: Vec<f64> = idx.iter().map(|&i| w[i].get(f, l)).collect();
            vals.sort_by(|a, b| a.total_cmp(b));
            vals.dedup();
            for pair in vals.windows(2) {
                let thr = 0.5 * (pair[0] + pair[1]);
                let (ge, lt): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| w[i].get(f, l) >= thr);
                if ge.len() < min_leaf || lt.len() < min_leaf {
                    continue;
                }
                let s = sse_of(&ge) + sse_of(&lt);
                if best.is_none_or(|b| s < b.0 - 1e-12 * here) {
                    best = Some((s, f, l, thr));
                }
            }
        }
    }
    match best {
        Some((s, f, l, thr)) if here - s > 1e-12 * here => {
            let (ge, lt): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| w[i].get(f, l) >= thr);
            brute_force_sse(y, w, ge, min_leaf) + brute_force_sse(y, w, lt, min_leaf)
        }
        _ => here,
    }
}

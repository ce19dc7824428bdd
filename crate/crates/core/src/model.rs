//! Sparse trend-cycle state-space templates.
//!
//! State layout (0-based): trends `τ`, then drifts `δ` for the trends that
//! carry one, then one AR(1) idiosyncratic cycle per series, then the common
//! AR(p) cycle and its `p - 1` lags. The extended variant appends a second
//! AR(p) cycle block shared by oil and the two inflation series.
//!
//! ```text
//! Z_t = B Φ_t + ξ_t,  ξ_t ~ N(0, ε I)
//! Φ_t = C Φ_{t-1} + ζ_t,  ζ_t ~ N(0, Q)
//! ```
//!
//! Only the states listed by [`ModelShape::innovation_states`] receive an
//! innovation; their variances form the diagonal `Σ`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{month_range, Month, Panel, Standardizer};
use crate::error::{Error, Result};

/// Measurement noise variance used throughout the empirical setup.
pub const DEFAULT_EPSILON: f64 = 1e-4;
/// Cycle lag order of the baseline model.
pub const BASELINE_LAGS: usize = 12;
/// Default margin used when projecting AR blocks back into the causal region.
pub const DEFAULT_CAUSALITY_MARGIN: f64 = 0.02;
/// Version tag of the coordinate ordering used by [`pack`] / [`unpack`].
pub const INDEX_ORDER_VERSION: u32 = 1;

/// Mnemonics of the nine baseline macro indicators, in model order.
pub const BASELINE_SERIES: [&str; 9] = [
    "TCU", "INDPRO", "RPCE", "PAYEMS", "EMRATIO", "UNRATE", "WTISPLC", "CPIAUCNS", "CPILFENS",
];

/// Dimensions and structural layout of a trend-cycle model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    /// Number of measurements.
    pub n: usize,
    /// Lag order of the common cycle(s).
    pub p: usize,
    /// Trend index loaded by each series. Trends shared by several series
    /// are loaded with `1 / η_i`.
    pub trend_of: Vec<usize>,
    /// Trends that carry a random-walk drift, ascending.
    pub drifts: Vec<usize>,
    /// Second common cycle on oil and inflation.
    pub extended: bool,
}

impl ModelShape {
    pub fn new(n: usize, p: usize, trend_of: Vec<usize>, drifts: Vec<usize>, extended: bool) -> Result<Self> {
        let shape = Self { n, p, trend_of, drifts, extended };
        shape.validate()?;
        Ok(shape)
    }

    /// Nine-series model: shared trend inflation, drifts on INDPRO, RPCE and PAYEMS.
    pub fn baseline(p: usize) -> Self {
        Self {
            n: 9,
            p,
            trend_of: vec![0, 1, 2, 3, 4, 5, 6, 7, 7],
            drifts: vec![1, 2, 3],
            extended: false,
        }
    }

    /// Baseline plus the energy-price cycle.
    pub fn extended(p: usize) -> Self {
        Self { extended: true, ..Self::baseline(p) }
    }

    /// `n` series, each with its own trend.
    pub fn independent_trends(n: usize, p: usize, drifts: Vec<usize>) -> Result<Self> {
        Self::new(n, p, (0..n).collect(), drifts, false)
    }

    pub fn with_lags(&self, p: usize) -> Self {
        Self { p, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Shape("model needs at least one series".into()));
        }
        if self.p == 0 {
            return Err(Error::Shape("cycle lag order must be at least 1".into()));
        }
        if self.trend_of.len() != self.n {
            return Err(Error::Shape(format!(
                "trend map has {} entries for {} series",
                self.trend_of.len(),
                self.n
            )));
        }
        let k = self.n_trends();
        for t in 0..k {
            if !self.trend_of.contains(&t) {
                return Err(Error::Shape(format!("trend {t} is loaded by no series")));
            }
        }
        if self.drifts.windows(2).any(|w| w[0] >= w[1]) || self.drifts.iter().any(|&d| d >= k) {
            return Err(Error::Shape("drifts must be ascending, distinct trend indices".into()));
        }
        if self.extended && self.n != 9 {
            return Err(Error::Shape(format!(
                "unsupported shape: extended model requires 9 series, got {}",
                self.n
            )));
        }
        Ok(())
    }

    pub fn n_trends(&self) -> usize {
        self.trend_of.iter().copied().max().map_or(0, |m| m + 1)
    }

    pub fn n_drifts(&self) -> usize {
        self.drifts.len()
    }

    pub fn n_cycles(&self) -> usize {
        if self.extended {
            2
        } else {
            1
        }
    }

    pub fn drift_start(&self) -> usize {
        self.n_trends()
    }

    pub fn idio_start(&self) -> usize {
        self.n_trends() + self.n_drifts()
    }

    /// Index of the idiosyncratic cycle of series `i`.
    pub fn idio_state(&self, i: usize) -> usize {
        self.idio_start() + i
    }

    /// First state of each common-cycle block.
    pub fn cycle_starts(&self) -> Vec<usize> {
        let base = self.idio_start() + self.n;
        (0..self.n_cycles()).map(|c| base + c * self.p).collect()
    }

    /// State index of the current common (business) cycle `ψ_1`.
    pub fn common_cycle_state(&self) -> usize {
        self.idio_start() + self.n
    }

    /// Series loading on cycle `c`; the first one is loaded with a fixed 1.
    pub fn cycle_rows(&self, c: usize) -> Vec<usize> {
        match c {
            0 => (0..self.n).collect(),
            _ => vec![6, 7, 8],
        }
    }

    /// State dimension `q`.
    pub fn q(&self) -> usize {
        self.idio_start() + self.n + self.n_cycles() * self.p
    }

    /// States that carry an innovation, ascending. Their count is `r`.
    pub fn innovation_states(&self) -> Vec<usize> {
        let mut v: Vec<usize> = (0..self.idio_start() + self.n).collect();
        v.extend(self.cycle_starts());
        v
    }

    pub fn r(&self) -> usize {
        self.idio_start() + self.n + self.n_cycles()
    }

    /// Whether `(i, j)` of `Ω_0` may differ from zero: diagonal outside the
    /// cycle region, dense inside it.
    pub fn omega0_free(&self, i: usize, j: usize) -> bool {
        let c0 = self.common_cycle_state();
        if i >= c0 && j >= c0 {
            return true;
        }
        i == j
    }

    /// Cycle block and lag of a state, if it belongs to a cycle block.
    pub fn cycle_lag(&self, state: usize) -> Option<(usize, usize)> {
        let c0 = self.common_cycle_state();
        if state < c0 || state >= self.q() {
            return None;
        }
        let k = state - c0;
        Some((k / self.p, k % self.p))
    }

    /// Default series names: the baseline mnemonics for 9-series models.
    pub fn default_series_ids(&self) -> Vec<String> {
        if self.n == 9 {
            BASELINE_SERIES.iter().map(|s| s.to_string()).collect()
        } else {
            (1..=self.n).map(|i| format!("Z{i}")).collect()
        }
    }

    fn shared_trend(&self, trend: usize) -> bool {
        self.trend_of.iter().filter(|&&t| t == trend).count() > 1
    }
}

/// Coordinates of the free entries, each in a fixed row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSets {
    /// Free transition entries (`π`).
    pub transition: Vec<(usize, usize)>,
    /// Free loading entries (`Υ̃`).
    pub loadings: Vec<(usize, usize)>,
    /// Free lower-triangular entries of `Ω_0` (`i >= j`).
    pub omega0: Vec<(usize, usize)>,
}

impl IndexSets {
    pub fn new(shape: &ModelShape) -> Self {
        let mut transition: Vec<(usize, usize)> =
            (0..shape.n).map(|i| (shape.idio_state(i), shape.idio_state(i))).collect();
        for cs in shape.cycle_starts() {
            transition.extend((0..shape.p).map(|k| (cs, cs + k)));
        }
        transition.sort_unstable();

        let mut loadings = Vec::new();
        for (c, cs) in shape.cycle_starts().into_iter().enumerate() {
            for &i in shape.cycle_rows(c).iter().skip(1) {
                loadings.extend((0..shape.p).map(|k| (i, cs + k)));
            }
        }
        loadings.sort_unstable();

        let q = shape.q();
        let mut omega0 = Vec::new();
        for j in 0..q {
            for i in j..q {
                if shape.omega0_free(i, j) {
                    omega0.push((i, j));
                }
            }
        }
        Self { transition, loadings, omega0 }
    }
}

/// Full parameter set of the trend-cycle model.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceParams {
    pub shape: ModelShape,
    /// Scale factors `η` used by the shared-trend loadings.
    pub eta: Vec<f64>,
    pub mu0: DVector<f64>,
    pub omega0: DMatrix<f64>,
    /// Transition matrix (`q x q`).
    pub c: DMatrix<f64>,
    /// Measurement loadings (`n x q`).
    pub b: DMatrix<f64>,
    /// Innovation variances, one per innovation state.
    pub sigma: Vec<f64>,
    /// Measurement noise variance.
    pub epsilon: f64,
}

impl StateSpaceParams {
    pub fn q(&self) -> usize {
        self.shape.q()
    }

    /// Full innovation covariance `Q` (`q x q`).
    pub fn q_matrix(&self) -> DMatrix<f64> {
        let mut qm = DMatrix::zeros(self.q(), self.q());
        for (k, s) in self.shape.innovation_states().into_iter().enumerate() {
            qm[(s, s)] = self.sigma[k];
        }
        qm
    }

    /// AR coefficients of cycle block `c`.
    pub fn cycle_coefficients(&self, c: usize) -> Vec<f64> {
        let cs = self.shape.cycle_starts()[c];
        (0..self.shape.p).map(|k| self.c[(cs, cs + k)]).collect()
    }

    pub fn set_cycle_coefficients(&mut self, c: usize, coeffs: &[f64]) {
        let cs = self.shape.cycle_starts()[c];
        for (k, &a) in coeffs.iter().enumerate() {
            self.c[(cs, cs + k)] = a;
        }
    }

    /// AR(1) coefficient of each idiosyncratic cycle.
    pub fn idio_coefficients(&self) -> Vec<f64> {
        (0..self.shape.n)
            .map(|i| {
                let s = self.shape.idio_state(i);
                self.c[(s, s)]
            })
            .collect()
    }

    /// Spectral radius of each common-cycle companion block.
    pub fn cycle_radii(&self) -> Vec<f64> {
        (0..self.shape.n_cycles())
            .map(|c| companion_spectral_radius(&self.cycle_coefficients(c)))
            .collect()
    }

    pub fn is_causal(&self) -> bool {
        self.idio_coefficients().iter().all(|a| a.abs() < 1.0) && self.cycle_radii().iter().all(|&r| r < 1.0)
    }

    /// Project every AR block into the causal region.
    pub fn enforce_causality(&mut self, margin: f64) {
        for i in 0..self.shape.n {
            let s = self.shape.idio_state(i);
            self.c[(s, s)] = enforce_causality(&[self.c[(s, s)]], margin)[0];
        }
        for c in 0..self.shape.n_cycles() {
            let coeffs = enforce_causality(&self.cycle_coefficients(c), margin);
            self.set_cycle_coefficients(c, &coeffs);
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        let finite = self.mu0.iter().all(|v| v.is_finite())
            && self.omega0.iter().all(|v| v.is_finite())
            && self.c.iter().all(|v| v.is_finite())
            && self.b.iter().all(|v| v.is_finite())
            && self.sigma.iter().all(|v| v.is_finite())
            && self.epsilon.is_finite();
        if finite {
            Ok(())
        } else {
            Err(Error::Numeric("non-finite state-space parameters".into()))
        }
    }

    pub fn penalty_view(&self) -> (Vec<f64>, Vec<f64>) {
        let sets = IndexSets::new(&self.shape);
        (
            sets.transition.iter().map(|&(i, j)| self.c[(i, j)]).collect(),
            sets.loadings.iter().map(|&(i, j)| self.b[(i, j)]).collect(),
        )
    }
}

/// Place every structural constant of the trend-cycle model. Free entries
/// of `C` and `B` start at zero, `Σ = 1`, `μ_0 = 0` and `Ω_0 = I`.
pub fn build_trend_cycle(shape: &ModelShape, eta: &Standardizer) -> Result<(StateSpaceParams, IndexSets)> {
    shape.validate()?;
    if eta.scales.len() != shape.n {
        return Err(Error::Shape(format!(
            "{} scale factors for {} series",
            eta.scales.len(),
            shape.n
        )));
    }
    let (n, q, p) = (shape.n, shape.q(), shape.p);
    let mut c = DMatrix::zeros(q, q);
    for k in 0..shape.n_trends() {
        c[(k, k)] = 1.0;
    }
    for (d, &trend) in shape.drifts.iter().enumerate() {
        let ds = shape.drift_start() + d;
        c[(ds, ds)] = 1.0;
        c[(trend, ds)] = 1.0;
    }
    for cs in shape.cycle_starts() {
        for k in 1..p {
            c[(cs + k, cs + k - 1)] = 1.0;
        }
    }

    let mut b = DMatrix::zeros(n, q);
    for i in 0..n {
        let trend = shape.trend_of[i];
        b[(i, trend)] = if shape.shared_trend(trend) { 1.0 / eta.scales[i] } else { 1.0 };
        b[(i, shape.idio_state(i))] = 1.0;
    }
    for (cyc, cs) in shape.cycle_starts().into_iter().enumerate() {
        let anchor = shape.cycle_rows(cyc)[0];
        b[(anchor, cs)] = 1.0;
    }

    let params = StateSpaceParams {
        shape: shape.clone(),
        eta: eta.scales.clone(),
        mu0: DVector::zeros(q),
        omega0: DMatrix::identity(q, q),
        c,
        b,
        sigma: vec![1.0; shape.r()],
        epsilon: DEFAULT_EPSILON,
    };
    Ok((params, IndexSets::new(shape)))
}

/// Elastic-net hyperparameters `γ = (λ, α, β)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl PenaltyConfig {
    pub fn new(lambda: f64, alpha: f64, beta: f64) -> Result<Self> {
        let g = Self { lambda, alpha, beta };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.beta >= 1.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be >= 1, got {}", self.beta)));
        }
        Ok(())
    }

    /// Diagonal entry `j` (0-based) of `Γ(γ, l)`: `λ β^j`.
    pub fn lag_weight(&self, j: usize) -> f64 {
        self.lambda * self.beta.powi(j as i32)
    }
}

/// `Γ(γ, l) = λ diag(1, β, ..., β^{l-1})`.
pub fn gamma_matrix(gamma: &PenaltyConfig, l: usize) -> Result<DMatrix<f64>> {
    if l == 0 {
        return Err(Error::Domain("Γ needs at least one lag".into()));
    }
    Ok(DMatrix::from_diagonal(&DVector::from_iterator(
        l,
        (0..l).map(|j| gamma.lag_weight(j)),
    )))
}

/// Penalty attached to one free coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordPenalty {
    pub coord: (usize, usize),
    /// Entry of `Γ̃` (transition) or `Γ(γ, p)` (loadings).
    pub base: f64,
    /// Added to the coordinate-update denominator.
    pub ridge: f64,
    /// Soft-threshold level of the coordinate update.
    pub lasso: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyWeights {
    pub transition: Vec<CoordPenalty>,
    pub loadings: Vec<CoordPenalty>,
}

/// Per-coordinate penalty weights on the scale of the closed-form updates.
///
/// Idiosyncratic AR coefficients get `λ`; the lag-`k` coefficient of a
/// common cycle gets `λ β^k`. Loadings on lag `k` get `ε λ β^k`.
pub fn effective_penalty_weights(gamma: &PenaltyConfig, shape: &ModelShape, epsilon: f64) -> PenaltyWeights {
    let sets = IndexSets::new(shape);
    let (ridge, lasso) = (1.0 - gamma.alpha, gamma.alpha / 2.0);
    let transition = sets
        .transition
        .iter()
        .map(|&(i, j)| {
            let base = match shape.cycle_lag(j) {
                Some((_, k)) => gamma.lag_weight(k),
                None => gamma.lambda,
            };
            CoordPenalty { coord: (i, j), base, ridge: ridge * base, lasso: lasso * base }
        })
        .collect();
    let loadings = sets
        .loadings
        .iter()
        .map(|&(i, j)| {
            let (_, k) = shape.cycle_lag(j).expect("loadings sit on cycle states");
            let base = gamma.lag_weight(k);
            CoordPenalty {
                coord: (i, j),
                base,
                ridge: ridge * epsilon * base,
                lasso: lasso * epsilon * base,
            }
        })
        .collect();
    PenaltyWeights { transition, loadings }
}

/// Companion matrix of AR coefficients `(a_1, ..., a_p)`.
pub fn companion(coeffs: &[f64]) -> DMatrix<f64> {
    let p = coeffs.len();
    let mut m = DMatrix::zeros(p, p);
    for (k, &a) in coeffs.iter().enumerate() {
        m[(0, k)] = a;
    }
    for k in 1..p {
        m[(k, k - 1)] = 1.0;
    }
    m
}

/// Spectral radius of the companion matrix of `coeffs`.
pub fn companion_spectral_radius(coeffs: &[f64]) -> f64 {
    match coeffs.len() {
        0 => 0.0,
        1 => coeffs[0].abs(),
        _ => companion(coeffs)
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max),
    }
}

/// Rescale a non-causal AR polynomial so its companion radius becomes
/// `1 - margin`: lag `k` is multiplied by `((1 - margin) / ρ)^k`.
pub fn enforce_causality(coeffs: &[f64], margin: f64) -> Vec<f64> {
    let rho = companion_spectral_radius(coeffs);
    if rho < 1.0 {
        return coeffs.to_vec();
    }
    let s = (1.0 - margin) / rho;
    coeffs
        .iter()
        .enumerate()
        .map(|(k, &a)| a * s.powi(k as i32 + 1))
        .collect()
}

/// Stationary covariance of an AR(p) companion state with innovation
/// variance `var`, by doubling iterations on `P = A P A' + Q`.
pub fn stationary_companion_covariance(coeffs: &[f64], var: f64) -> DMatrix<f64> {
    let p = coeffs.len();
    let mut a = companion(coeffs);
    let mut acc = DMatrix::zeros(p, p);
    acc[(0, 0)] = var;
    for _ in 0..60 {
        let next = &acc + &a * &acc * a.transpose();
        let done = (&next - &acc).amax() <= 1e-14 * next.amax().max(1e-300);
        acc = next;
        a = &a * &a;
        if done {
            break;
        }
    }
    0.5 * (&acc + acc.transpose())
}

/// Symmetric square root factor `L` with `L L' = m` for a PSD matrix.
pub(crate) fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = m.clone().cholesky() {
        return ch.l();
    }
    let eig = m.clone().symmetric_eigen();
    let mut v = eig.eigenvectors;
    for (k, lam) in eig.eigenvalues.iter().enumerate() {
        let s = lam.max(0.0).sqrt();
        v.column_mut(k).scale_mut(s);
    }
    v
}

/// Simulated panel together with the latent states `Φ_0..Φ_T` (columns).
#[derive(Debug, Clone)]
pub struct Simulation {
    pub panel: Panel,
    pub states: DMatrix<f64>,
}

/// Draw a sample path of length `len` from the model.
pub fn simulate(params: &StateSpaceParams, len: usize, seed: u64, start: Month) -> Result<Simulation> {
    params.check_finite()?;
    if !params.is_causal() {
        return Err(Error::NonCausal(format!(
            "cycle radii {:?}, idiosyncratic {:?}",
            params.cycle_radii(),
            params.idio_coefficients()
        )));
    }
    if params.sigma.iter().any(|&s| s < 0.0) || params.epsilon < 0.0 {
        return Err(Error::Domain("variances must be nonnegative".into()));
    }
    let (q, n) = (params.q(), params.shape.n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |k: usize| -> DVector<f64> {
        DVector::from_iterator(k, (0..k).map(|_| StandardNormal.sample(&mut rng)))
    };
    let l0 = psd_factor(&params.omega0);
    let innov = params.shape.innovation_states();
    let sd: Vec<f64> = params.sigma.iter().map(|s| s.sqrt()).collect();
    let noise_sd = params.epsilon.sqrt();

    let mut states = DMatrix::zeros(q, len + 1);
    let phi0 = &params.mu0 + &l0 * draw(q);
    states.set_column(0, &phi0);
    let mut z = DMatrix::zeros(n, len);
    let mut phi = phi0;
    for t in 1..=len {
        let e = draw(innov.len());
        let mut next = &params.c * &phi;
        for (k, &s) in innov.iter().enumerate() {
            next[s] += sd[k] * e[k];
        }
        let xi = draw(n);
        let zt = &params.b * &next + xi * noise_sd;
        z.set_column(t - 1, &zt);
        states.set_column(t, &next);
        phi = next;
    }
    let panel = Panel::from_matrix(params.shape.default_series_ids(), month_range(start, len), z)?;
    Ok(Simulation { panel, states })
}

/// Flatten the free parameters into `ϑ = (μ_0, vech Ω_0, vec Υ̃, π, diag Σ)`.
pub fn pack(params: &StateSpaceParams) -> Vec<f64> {
    let sets = IndexSets::new(&params.shape);
    let mut theta: Vec<f64> = params.mu0.iter().copied().collect();
    theta.extend(sets.omega0.iter().map(|&(i, j)| params.omega0[(i, j)]));
    let mut vec_order = sets.loadings.clone();
    vec_order.sort_unstable_by_key(|&(i, j)| (j, i));
    theta.extend(vec_order.iter().map(|&(i, j)| params.b[(i, j)]));
    theta.extend(sets.transition.iter().map(|&(i, j)| params.c[(i, j)]));
    theta.extend(params.sigma.iter().copied());
    theta
}

/// Length of `ϑ` for a shape.
pub fn packed_len(shape: &ModelShape) -> usize {
    let sets = IndexSets::new(shape);
    shape.q() + sets.omega0.len() + sets.loadings.len() + sets.transition.len() + shape.r()
}

/// Inverse of [`pack`].
pub fn unpack(shape: &ModelShape, eta: &Standardizer, epsilon: f64, theta: &[f64]) -> Result<StateSpaceParams> {
    if theta.len() != packed_len(shape) {
        return Err(Error::Shape(format!(
            "parameter vector has {} entries, expected {}",
            theta.len(),
            packed_len(shape)
        )));
    }
    let (mut params, sets) = build_trend_cycle(shape, eta)?;
    params.epsilon = epsilon;
    let q = shape.q();
    let mut it = theta.iter().copied();
    for k in 0..q {
        params.mu0[k] = it.next().unwrap_or_default();
    }
    params.omega0.fill(0.0);
    for &(i, j) in &sets.omega0 {
        let v = it.next().unwrap_or_default();
        params.omega0[(i, j)] = v;
        params.omega0[(j, i)] = v;
    }
    let mut vec_order = sets.loadings.clone();
    vec_order.sort_unstable_by_key(|&(i, j)| (j, i));
    for &(i, j) in &vec_order {
        params.b[(i, j)] = it.next().unwrap_or_default();
    }
    for &(i, j) in &sets.transition {
        params.c[(i, j)] = it.next().unwrap_or_default();
    }
    for s in params.sigma.iter_mut() {
        *s = it.next().unwrap_or_default();
    }
    Ok(params)
}

/// Flat JSON document for a fitted parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSnapshot {
    pub index_order_version: u32,
    pub shape: ModelShape,
    pub q: usize,
    pub r: usize,
    pub epsilon: f64,
    pub eta: Vec<f64>,
    pub theta: Vec<f64>,
}

impl ParamSnapshot {
    pub fn from_params(params: &StateSpaceParams) -> Self {
        Self {
            index_order_version: INDEX_ORDER_VERSION,
            shape: params.shape.clone(),
            q: params.q(),
            r: params.shape.r(),
            epsilon: params.epsilon,
            eta: params.eta.clone(),
            theta: pack(params),
        }
    }

    pub fn to_params(&self) -> Result<StateSpaceParams> {
        if self.index_order_version != INDEX_ORDER_VERSION {
            return Err(Error::Config(format!(
                "snapshot ordering version {} is not supported",
                self.index_order_version
            )));
        }
        unpack(&self.shape, &Standardizer::new(self.eta.clone())?, self.epsilon, &self.theta)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

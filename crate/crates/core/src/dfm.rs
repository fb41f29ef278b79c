//! Linear-Gaussian dynamic factor models.
//!
//! ```text
//! x_{t+1} = A x_t + C w_{t+1},   w ~ N(0, I_N)
//! y_t     = G x_t + v_t,         v ~ N(0, sigma_v^2 I_M)
//! ```
//!
//! This module holds the model type, its steady-state innovations form
//! (Riccati solution), panel simulation, and two likelihoods: the exact
//! prediction-error decomposition from the Kalman filter and the first-order
//! VAR likelihood built from `B_1 = G K`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, SpdFactor};
use crate::rng;

pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 1_000_000;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    a: DMatrix<f64>,
    c: DMatrix<f64>,
    g: DMatrix<f64>,
    sigma_v: f64,
}

/// Rank conditions on `(A, G)` that the large-M theory assumes but that the
/// model type itself does not enforce (degenerate models are useful oracles).
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub rank_a: usize,
    pub rank_g: usize,
    pub n_factors: usize,
    pub n_obs: usize,
    pub sigma_v_positive: bool,
}

impl AssumptionReport {
    pub fn holds(&self) -> bool {
        self.rank_a == self.n_factors
            && self.rank_g == self.n_factors
            && self.n_obs >= self.n_factors
            && self.sigma_v_positive
    }
}

impl StateSpaceModel {
    /// Validates dimensions, `M >= N`, finiteness, `sigma_v >= 0` and
    /// stationarity of `A`.
    pub fn new(a: DMatrix<f64>, c: DMatrix<f64>, g: DMatrix<f64>, sigma_v: f64) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::dims(format!("A must be square and non-empty, got {}x{}", a.nrows(), a.ncols())));
        }
        if c.shape() != (n, n) {
            return Err(Error::dims(format!("C must be {n}x{n}, got {}x{}", c.nrows(), c.ncols())));
        }
        if g.ncols() != n || g.nrows() == 0 {
            return Err(Error::dims(format!("G must be Mx{n} with M>0, got {}x{}", g.nrows(), g.ncols())));
        }
        if g.nrows() < n {
            return Err(Error::dims(format!("need M >= N, got M={} N={n}", g.nrows())));
        }
        if !(sigma_v.is_finite() && sigma_v >= 0.0) {
            return Err(Error::invalid(format!("sigma_v must be finite and >= 0, got {sigma_v}")));
        }
        if a.iter().chain(c.iter()).chain(g.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("model matrices must be finite"));
        }
        let radius = linalg::spectral_radius(&a);
        if radius >= 1.0 {
            return Err(Error::NotStationary { radius });
        }
        Ok(Self { a, c, g, sigma_v })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn sigma_v(&self) -> f64 {
        self.sigma_v
    }

    pub fn n_factors(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_obs(&self) -> usize {
        self.g.nrows()
    }

    /// Same dynamics, different cross-section.
    pub fn with_loadings(&self, g: DMatrix<f64>) -> Result<Self> {
        Self::new(self.a.clone(), self.c.clone(), g, self.sigma_v)
    }

    pub fn with_sigma_v(&self, sigma_v: f64) -> Result<Self> {
        Self::new(self.a.clone(), self.c.clone(), self.g.clone(), sigma_v)
    }

    pub fn assumption_report(&self) -> AssumptionReport {
        AssumptionReport {
            rank_a: linalg::numerical_rank(&self.a, 1e-10),
            rank_g: linalg::numerical_rank(&self.g, 1e-10),
            n_factors: self.n_factors(),
            n_obs: self.n_obs(),
            sigma_v_positive: self.sigma_v > 0.0,
        }
    }

    fn shock_cov(&self) -> DMatrix<f64> {
        &self.c * self.c.transpose()
    }
}

/// Steady-state innovations representation `y_t = G x̂_t + a_t`,
/// `x̂_{t+1} = A x̂_t + K a_t`.
#[derive(Debug, Clone)]
pub struct InnovationsForm {
    /// Steady-state Kalman gain, N x M.
    pub k: DMatrix<f64>,
    /// One-step state forecast-error covariance, N x N.
    pub sigma_inf: DMatrix<f64>,
    /// Innovation covariance `G Σ Gᵀ + R`, M x M.
    pub omega: DMatrix<f64>,
    /// First VAR coefficient `G K`, M x M.
    pub b1: DMatrix<f64>,
    /// Max-abs residual of `Σ = CCᵀ + K R Kᵀ + (A−KG) Σ (A−KG)ᵀ`.
    pub riccati_residual: f64,
    pub iterations: usize,
}

impl InnovationsForm {
    /// `A − K G`, the filter's state-forecast transition.
    pub fn a_minus_kg(&self, model: &StateSpaceModel) -> DMatrix<f64> {
        model.a() - &self.k * model.g()
    }
}

/// Steady-state gain map: returns `Σ Gᵀ (G Σ Gᵀ + R)⁻¹` (N x M).
///
/// With `R = σ²I` and `S = GᵀG` the identity
/// `(GΣGᵀ + σ²I)⁻¹ G = G (ΣS + σ²I)⁻¹` keeps every solve N x N.
fn filter_gain(model: &StateSpaceModel, sigma: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = model.n_factors();
    let var_v = model.sigma_v * model.sigma_v;
    if var_v > 0.0 {
        let q = s * sigma + DMatrix::identity(n, n) * var_v;
        let z = linalg::solve(&q, &model.g.transpose(), "S Σ + σ²I")?;
        Ok(sigma * z)
    } else {
        let f = model.g() * sigma * model.g().transpose();
        let eps = 1e-12 * linalg::max_abs(&f).max(f64::MIN_POSITIVE);
        let f_pinv = f
            .pseudo_inverse(eps)
            .map_err(|e| Error::NumericalSingularity(e.to_string()))?;
        Ok(sigma * model.g().transpose() * f_pinv)
    }
}

fn riccati_step(model: &StateSpaceModel, sigma: &DMatrix<f64>, cc: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let a = model.a();
    let gain = filter_gain(model, sigma, s)?;
    let reduction = a * &gain * model.g() * sigma * a.transpose();
    let next = a * sigma * a.transpose() + cc - reduction;
    Ok(linalg::symmetrize(&next))
}

/// Steady-state Kalman filter by fixed-point iteration on the Riccati map,
/// started from `Σ₀ = CCᵀ` and stopped when the max-abs change is `<= tol`.
pub fn solve_riccati(model: &StateSpaceModel, tol: f64, max_iter: usize) -> Result<InnovationsForm> {
    if !(tol > 0.0) || max_iter == 0 {
        return Err(Error::invalid("tol must be > 0 and max_iter >= 1"));
    }
    let cc = model.shock_cov();
    let s = model.g().transpose() * model.g();
    let mut sigma = cc.clone();
    let mut last_change = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        let next = riccati_step(model, &sigma, &cc, &s)?;
        last_change = linalg::max_abs_diff(&next, &sigma);
        sigma = next;
        iterations += 1;
        if !last_change.is_finite() {
            break;
        }
        if last_change <= tol {
            return innovations_from_sigma(model, sigma, iterations);
        }
    }
    Err(Error::NonConvergence { iterations, last_change })
}

fn innovations_from_sigma(model: &StateSpaceModel, sigma: DMatrix<f64>, iterations: usize) -> Result<InnovationsForm> {
    let n = model.n_factors();
    let m = model.n_obs();
    let var_v = model.sigma_v * model.sigma_v;
    let s = model.g().transpose() * model.g();
    let k = model.a() * filter_gain(model, &sigma, &s)?;
    let omega = linalg::symmetrize(&(model.g() * &sigma * model.g().transpose() + DMatrix::identity(m, m) * var_v));
    let b1 = model.g() * &k;

    let a_kg = model.a() - &k * model.g();
    let rhs = model.shock_cov() + &k * k.transpose() * var_v + &a_kg * &sigma * a_kg.transpose();
    let riccati_residual = linalg::max_abs_diff(&sigma, &rhs);
    debug_assert_eq!(k.shape(), (n, m));

    Ok(InnovationsForm {
        k,
        sigma_inf: sigma,
        omega,
        b1,
        riccati_residual,
        iterations,
    })
}

/// Stationary state covariance: fixed point of `P = A P Aᵀ + CCᵀ`.
pub fn stationary_state_cov(model: &StateSpaceModel, tol: f64, max_iter: usize) -> Result<DMatrix<f64>> {
    if !(tol > 0.0) || max_iter == 0 {
        return Err(Error::invalid("tol must be > 0 and max_iter >= 1"));
    }
    let a = model.a();
    let cc = model.shock_cov();
    let mut p = cc.clone();
    let mut last_change = f64::INFINITY;
    for iterations in 1..=max_iter {
        let next = linalg::symmetrize(&(a * &p * a.transpose() + &cc));
        last_change = linalg::max_abs_diff(&next, &p);
        p = next;
        if last_change <= tol {
            return Ok(p);
        }
        if !last_change.is_finite() {
            return Err(Error::NonConvergence { iterations, last_change });
        }
    }
    Err(Error::NonConvergence { iterations: max_iter, last_change })
}

/// `B_j = G (A − KG)^{j−1} K`, the j-th coefficient of the VAR(∞) form.
pub fn var_coefficient(model: &StateSpaceModel, innov: &InnovationsForm, j: usize) -> Result<DMatrix<f64>> {
    if j == 0 {
        return Err(Error::invalid("VAR lag j must be >= 1"));
    }
    if innov.k.shape() != (model.n_factors(), model.n_obs()) {
        return Err(Error::dims("innovations form was not solved from this model"));
    }
    if j == 1 {
        return Ok(innov.b1.clone());
    }
    let a_kg = innov.a_minus_kg(model);
    let mut right = innov.k.clone();
    for _ in 1..j {
        right = &a_kg * right;
    }
    Ok(model.g() * right)
}

/// An M x T observation panel; columns are periods.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    y: DMatrix<f64>,
    seed: u64,
    burn_in: usize,
    latent: Option<DMatrix<f64>>,
    meas_error_std: Option<f64>,
}

impl PanelData {
    pub fn new(y: DMatrix<f64>) -> Result<Self> {
        if y.nrows() == 0 || y.ncols() == 0 {
            return Err(Error::dims("panel must have at least one row and one period"));
        }
        if let Some(pos) = y.iter().position(|v| !v.is_finite()) {
            let (row, col) = (pos % y.nrows(), pos / y.nrows());
            return Err(Error::invalid(format!("panel entry ({row}, {col}) is missing or not finite")));
        }
        Ok(Self {
            y,
            seed: 0,
            burn_in: 0,
            latent: None,
            meas_error_std: None,
        })
    }

    pub fn with_provenance(mut self, seed: u64, burn_in: usize) -> Self {
        self.seed = seed;
        self.burn_in = burn_in;
        self
    }

    pub fn with_latent(mut self, latent: DMatrix<f64>) -> Result<Self> {
        if latent.ncols() != self.y.ncols() {
            return Err(Error::dims(format!(
                "latent path has {} periods, panel has {}",
                latent.ncols(),
                self.y.ncols()
            )));
        }
        self.latent = Some(latent);
        Ok(self)
    }

    pub fn with_meas_error_std(mut self, std: f64) -> Self {
        self.meas_error_std = Some(std);
        self
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.y
    }

    pub fn n_obs(&self) -> usize {
        self.y.nrows()
    }

    pub fn periods(&self) -> usize {
        self.y.ncols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in
    }

    pub fn latent(&self) -> Option<&DMatrix<f64>> {
        self.latent.as_ref()
    }

    pub fn meas_error_std(&self) -> Option<f64> {
        self.meas_error_std
    }

    /// Copy with every row centred at its time mean; provenance is kept.
    pub fn demeaned(&self) -> Self {
        Self {
            y: linalg::demean_rows(&self.y),
            ..self.clone()
        }
    }
}

/// Standard-normal matrix filled column by column from one stream.
pub(crate) fn normal_matrix(rows: usize, cols: usize, seed: u64, stream: u64) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows, cols);
    let mut rng = rng::stream_rng(seed, stream);
    rng::fill_standard_normal(&mut rng, out.as_mut_slice());
    out
}

/// Latent path `x_1..x_T` after discarding `burn_in` steps from `x_0 = 0`.
pub(crate) fn latent_path(model: &StateSpaceModel, periods: usize, burn_in: usize, seed: u64) -> DMatrix<f64> {
    let n = model.n_factors();
    let total = burn_in + periods;
    let shocks = model.c() * normal_matrix(n, total, seed, rng::STREAM_STATE_SHOCKS);
    let mut x = DVector::zeros(n);
    let mut next = DVector::zeros(n);
    let mut out = DMatrix::zeros(n, periods);
    for t in 0..total {
        next.copy_from(&shocks.column(t));
        next.gemv(1.0, model.a(), &x, 1.0);
        std::mem::swap(&mut x, &mut next);
        if t >= burn_in {
            out.set_column(t - burn_in, &x);
        }
    }
    out
}

/// Simulate `periods` observations after `burn_in` discarded steps.
///
/// State shocks and measurement errors come from separate streams of `seed`,
/// so changing `sigma_v` rescales the same error draws.
pub fn simulate_dfm(
    model: &StateSpaceModel,
    periods: usize,
    burn_in: usize,
    seed: u64,
    keep_latent: bool,
) -> Result<PanelData> {
    if periods == 0 {
        return Err(Error::invalid("periods must be >= 1"));
    }
    let latent = latent_path(model, periods, burn_in, seed);
    let mut y = model.g() * &latent;
    if model.sigma_v > 0.0 {
        let noise = normal_matrix(model.n_obs(), periods, seed, rng::STREAM_MEASUREMENT);
        y += noise * model.sigma_v;
    }
    let panel = PanelData::new(y)?
        .with_provenance(seed, burn_in)
        .with_meas_error_std(model.sigma_v);
    if keep_latent {
        panel.with_latent(latent)
    } else {
        Ok(panel)
    }
}

fn check_panel(model: &StateSpaceModel, panel: &PanelData) -> Result<()> {
    if panel.n_obs() != model.n_obs() {
        return Err(Error::dims(format!(
            "panel has {} rows, model has M={}",
            panel.n_obs(),
            model.n_obs()
        )));
    }
    Ok(())
}

/// Per-period terms of the exact Gaussian log-likelihood.
///
/// Time-varying Kalman filter started at `x̂_1 = 0` with the stationary state
/// covariance. Entry `t` is `log p(y_t | y_1..y_{t-1})`.
pub fn kalman_loglik_terms(model: &StateSpaceModel, panel: &PanelData) -> Result<Vec<f64>> {
    check_panel(model, panel)?;
    let p0 = stationary_state_cov(model, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    if model.sigma_v > 0.0 {
        kalman_terms_low_rank(model, panel, p0)
    } else {
        kalman_terms_dense(model, panel, p0)
    }
}

/// Exact log-likelihood `ℓ^DFM` (prediction-error decomposition).
pub fn kalman_loglik(model: &StateSpaceModel, panel: &PanelData) -> Result<f64> {
    Ok(kalman_loglik_terms(model, panel)?.iter().sum())
}

// With R = σ²I every M x M operation collapses to N x N through
// F⁻¹ = (I − G Q⁻¹ P Gᵀ)/σ², Q = P S + σ²I, det F = σ^{2(M−N)} det Q.
fn kalman_terms_low_rank(model: &StateSpaceModel, panel: &PanelData, mut p: DMatrix<f64>) -> Result<Vec<f64>> {
    let (a, g) = (model.a(), model.g());
    let n = model.n_factors();
    let m = model.n_obs() as f64;
    let var_v = model.sigma_v * model.sigma_v;
    let s = g.transpose() * g;
    let cc = model.shock_cov();
    let eye = DMatrix::<f64>::identity(n, n);
    let mut x = DVector::<f64>::zeros(n);
    let mut terms = Vec::with_capacity(panel.periods());

    for (t, y) in panel.y().column_iter().enumerate() {
        let e = y - g * &x;
        let u = g.transpose() * &e;
        let q = &p * &s + &eye * var_v;
        let lu = q.clone().lu();
        let det_q = lu.determinant();
        if !(det_q > 0.0) || !det_q.is_finite() {
            return Err(Error::NumericalSingularity(format!("forecast covariance F_{} is not positive definite", t + 1)));
        }
        let w = lu
            .solve(&(&p * &u))
            .ok_or_else(|| Error::NumericalSingularity(format!("F_{} is singular", t + 1)))?;
        let quad = (e.norm_squared() - u.dot(&w)) / var_v;
        let log_det = (m - n as f64) * var_v.ln() + det_q.ln();
        if !(quad >= -1e-9 * e.norm_squared().max(1.0) / var_v) {
            return Err(Error::NumericalSingularity(format!("F_{} is not positive definite", t + 1)));
        }
        terms.push(-0.5 * (m * LN_2PI + log_det + quad));

        // Gᵀ F⁻¹ e = (SP + σ²I)⁻¹ u and Gᵀ F⁻¹ G = S Q⁻¹.
        let qt = q.transpose();
        let v = linalg::solve(&qt, &DMatrix::from_column_slice(n, 1, u.as_slice()), "Qᵀ")?;
        let filt_x = &x + &p * v.column(0);
        let q_inv_p = linalg::solve(&q, &p, "Q")?;
        let filt_p = &p - &p * &s * q_inv_p;
        x = a * filt_x;
        p = linalg::symmetrize(&(a * filt_p * a.transpose() + &cc));
    }
    Ok(terms)
}

fn kalman_terms_dense(model: &StateSpaceModel, panel: &PanelData, mut p: DMatrix<f64>) -> Result<Vec<f64>> {
    let (a, g) = (model.a(), model.g());
    let m = model.n_obs();
    let var_v = model.sigma_v * model.sigma_v;
    let cc = model.shock_cov();
    let mut x = DVector::<f64>::zeros(model.n_factors());
    let mut terms = Vec::with_capacity(panel.periods());

    for (t, y) in panel.y().column_iter().enumerate() {
        let e = y - g * &x;
        let f = g * &p * g.transpose() + DMatrix::identity(m, m) * var_v;
        let fac = SpdFactor::new(&f)
            .ok_or_else(|| Error::NumericalSingularity(format!("forecast covariance F_{} is not positive definite", t + 1)))?;
        terms.push(-0.5 * (m as f64 * LN_2PI + fac.log_det + fac.quad_form(&e)));

        let f_inv = linalg::solve(&f, &DMatrix::identity(m, m), "F")?;
        let pg = &p * g.transpose();
        let filt_x = &x + &pg * &f_inv * &e;
        let filt_p = &p - &pg * &f_inv * pg.transpose();
        x = a * filt_x;
        p = linalg::symmetrize(&(a * filt_p * a.transpose() + &cc));
    }
    Ok(terms)
}

/// Log-likelihood of the first-order VAR `y_t = B_1 y_{t−1} + a_t`,
/// `a_t ~ N(0, Ω)`, summed over `t = 2..T`.
pub fn var1_loglik(model: &StateSpaceModel, innov: &InnovationsForm, panel: &PanelData) -> Result<f64> {
    check_panel(model, panel)?;
    if innov.b1.shape() != (model.n_obs(), model.n_obs()) {
        return Err(Error::dims("innovations form was not solved from this model"));
    }
    gaussian_var1_loglik(&innov.b1, &innov.omega, panel.y())
}

pub(crate) fn gaussian_var1_loglik(b: &DMatrix<f64>, omega: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    let (m, t) = y.shape();
    if t < 2 {
        return Err(Error::PanelTooShort { needed: 2, got: t });
    }
    let fac = SpdFactor::new(omega)
        .ok_or_else(|| Error::NumericalSingularity("innovation covariance is not positive definite".into()))?;
    let resid = y.columns(1, t - 1) - b * y.columns(0, t - 1);
    let n_terms = (t - 1) as f64;
    Ok(-0.5 * (n_terms * (m as f64 * LN_2PI + fac.log_det) + fac.quad_form_columns(&resid)))
}

/// `−(M/2) log 2π`, the normalising constant of one M-variate period.
pub fn gaussian_constant(m: usize) -> f64 {
    -0.5 * m as f64 * (2.0 * PI).ln()
}

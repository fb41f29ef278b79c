//! Reduced-rank first-order VAR fitted by the Dynamic Mode Decomposition.
//!
//! Given snapshots `Y = [y_1..y_J]` and `Y' = [y_2..y_{J+1}]`, the rank-N
//! fit is `B = Y' V S⁻¹ Uᵀ` where `U S Vᵀ` is the rank-N truncated SVD of
//! `Y`, and `Ω` is the residual covariance plus a small ridge.
//!
//! Two routes produce the same fit: the SVD of the snapshot matrix itself
//! ([`dmd_fit`]) and an eigendecomposition of the M x M second-moment
//! matrices ([`dmd_fit_moments`]). The second never touches a J-length
//! dimension after the moments are formed, which is what the estimation
//! loop uses.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dfm::PanelData;
use crate::error::{Error, Result};
use crate::linalg::{self, SpdFactor};

/// Singular values at or below this fraction of the largest are treated as
/// zero (pseudo-inverse convention).
pub const ZERO_SINGULAR_REL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotPair {
    y: DMatrix<f64>,
    yp: DMatrix<f64>,
}

impl SnapshotPair {
    /// Pair from explicit matrices; `yp` must be the one-step successor of `y`.
    pub fn new(y: DMatrix<f64>, yp: DMatrix<f64>) -> Result<Self> {
        if y.shape() != yp.shape() {
            return Err(Error::dims(format!(
                "snapshot matrices differ in shape: {:?} vs {:?}",
                y.shape(),
                yp.shape()
            )));
        }
        if y.ncols() < 2 {
            return Err(Error::PanelTooShort { needed: 3, got: y.ncols() + 1 });
        }
        Ok(Self { y, yp })
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn yp(&self) -> &DMatrix<f64> {
        &self.yp
    }

    /// Number of snapshot columns J.
    pub fn j(&self) -> usize {
        self.y.ncols()
    }

    pub fn n_obs(&self) -> usize {
        self.y.nrows()
    }
}

pub fn build_snapshots(panel: &PanelData) -> Result<SnapshotPair> {
    snapshots_from_matrix(panel.y())
}

pub(crate) fn snapshots_from_matrix(y: &DMatrix<f64>) -> Result<SnapshotPair> {
    let t = y.ncols();
    if t < 3 {
        return Err(Error::PanelTooShort { needed: 3, got: t });
    }
    SnapshotPair::new(y.columns(0, t - 1).into_owned(), y.columns(1, t - 1).into_owned())
}

#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    /// M x N, orthonormal columns.
    pub u: DMatrix<f64>,
    /// N singular values, descending.
    pub s: DVector<f64>,
    /// J x N, orthonormal columns.
    pub v: DMatrix<f64>,
    /// Fraction of the squared Frobenius norm not captured by the N factors.
    pub discarded_energy: f64,
}

/// Full thin SVD sorted by descending singular value (stable on ties).
#[derive(Debug, Clone)]
pub struct SortedSvd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl SortedSvd {
    pub fn new(y: &DMatrix<f64>) -> Result<Self> {
        if y.nrows() == 0 || y.ncols() == 0 {
            return Err(Error::dims("cannot decompose an empty matrix"));
        }
        let svd = y.clone().svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(Error::NumericalSingularity("SVD did not converge".into())),
        };
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let k = order.len();
        let mut su = DMatrix::zeros(u.nrows(), k);
        let mut sv = DMatrix::zeros(v_t.ncols(), k);
        let mut ss = DVector::zeros(k);
        for (dst, &src) in order.iter().enumerate() {
            su.set_column(dst, &u.column(src));
            sv.set_column(dst, &v_t.row(src).transpose());
            ss[dst] = svd.singular_values[src];
        }
        Ok(Self { u: su, s: ss, v: sv })
    }

    pub fn truncate(&self, n: usize) -> Result<TruncatedSvd> {
        let max = self.s.len();
        if n == 0 || n > max {
            return Err(Error::RankTooLarge { rank: n, max });
        }
        let total: f64 = self.s.iter().map(|v| v * v).sum();
        let kept: f64 = self.s.iter().take(n).map(|v| v * v).sum();
        let discarded_energy = if total > 0.0 { (1.0 - kept / total).clamp(0.0, 1.0) } else { 0.0 };
        Ok(TruncatedSvd {
            u: self.u.columns(0, n).into_owned(),
            s: self.s.rows(0, n).into_owned(),
            v: self.v.columns(0, n).into_owned(),
            discarded_energy,
        })
    }
}

pub fn truncated_svd(y: &DMatrix<f64>, n: usize) -> Result<TruncatedSvd> {
    let max = y.nrows().min(y.ncols());
    if n == 0 || n > max {
        return Err(Error::RankTooLarge { rank: n, max });
    }
    SortedSvd::new(y)?.truncate(n)
}

/// Diagonal ridge added to the residual covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shrinkage {
    /// `δ = factor · trace(Ω̃)/M`.
    Relative(f64),
    /// Fixed `δ`.
    Absolute(f64),
}

impl Default for Shrinkage {
    fn default() -> Self {
        Shrinkage::Relative(1e-8)
    }
}

impl Shrinkage {
    fn delta(&self, raw_omega: &DMatrix<f64>) -> Result<f64> {
        let d = match *self {
            Shrinkage::Relative(f) => f * raw_omega.trace() / raw_omega.nrows() as f64,
            Shrinkage::Absolute(d) => d,
        };
        let factor = match *self {
            Shrinkage::Relative(f) | Shrinkage::Absolute(f) => f,
        };
        if !(factor >= 0.0 && factor.is_finite()) {
            return Err(Error::invalid(format!("shrinkage must be finite and >= 0, got {factor}")));
        }
        Ok(d.max(0.0))
    }
}

/// Rank-N VAR(1) `y_t = B y_{t−1} + a_t`, `a_t ~ N(0, Ω)`.
#[derive(Debug, Clone)]
pub struct ReducedVAR {
    /// `Y' V S⁻¹`, M x N.
    pub left: DMatrix<f64>,
    /// `Uᵀ`, N x M.
    pub right: DMatrix<f64>,
    /// `left · right`.
    pub b: DMatrix<f64>,
    /// Residual covariance including the ridge.
    pub omega: DMatrix<f64>,
    /// Requested rank.
    pub rank: usize,
    /// Number of retained directions with nonzero singular value.
    pub effective_rank: usize,
    /// The ridge `δ` actually added to the diagonal.
    pub shrinkage: f64,
    /// Retained singular values of the snapshot matrix.
    pub singular_values: DVector<f64>,
}

impl ReducedVAR {
    pub fn n_obs(&self) -> usize {
        self.b.nrows()
    }

    /// `B x` through the factored form.
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        &self.left * (&self.right * x)
    }

    /// One-step residuals `y_t − B y_{t−1}`, `t = 2..T`, of a panel.
    pub fn residuals(&self, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let t = y.ncols();
        if y.nrows() != self.n_obs() {
            return Err(Error::dims(format!("data has {} rows, fit has M={}", y.nrows(), self.n_obs())));
        }
        if t < 2 {
            return Err(Error::PanelTooShort { needed: 2, got: t });
        }
        Ok(y.columns(1, t - 1) - self.apply(&y.columns(0, t - 1).into_owned()))
    }
}

fn effective_rank(s: &DVector<f64>, top: f64) -> usize {
    s.iter().take_while(|&&v| v > ZERO_SINGULAR_REL * top && v > 0.0).count()
}

fn finish(
    left: DMatrix<f64>,
    right: DMatrix<f64>,
    raw_omega: DMatrix<f64>,
    rank: usize,
    effective_rank: usize,
    shrinkage: Shrinkage,
    singular_values: DVector<f64>,
) -> Result<ReducedVAR> {
    let m = raw_omega.nrows();
    let raw_omega = linalg::symmetrize(&raw_omega);
    let delta = shrinkage.delta(&raw_omega)?;
    let omega = raw_omega + DMatrix::identity(m, m) * delta;
    if SpdFactor::new(&omega).is_none() {
        return Err(Error::SingularOmega);
    }
    let b = &left * &right;
    Ok(ReducedVAR {
        left,
        right,
        b,
        omega,
        rank,
        effective_rank,
        shrinkage: delta,
        singular_values,
    })
}

/// Rank-N DMD fit from a precomputed SVD of `pair.y()`; used for nested fits.
pub fn dmd_fit_from_svd(pair: &SnapshotPair, svd: &SortedSvd, n: usize, shrinkage: Shrinkage) -> Result<ReducedVAR> {
    if svd.u.nrows() != pair.n_obs() || svd.v.nrows() != pair.j() {
        return Err(Error::dims("SVD does not belong to these snapshots"));
    }
    let tr = svd.truncate(n)?;
    let top = svd.s.get(0).copied().unwrap_or(0.0);
    let k = effective_rank(&tr.s, top);
    let m = pair.n_obs();
    let u = tr.u.columns(0, k);
    let v = tr.v.columns(0, k);
    let yp_v = pair.yp() * v;
    let mut left = DMatrix::zeros(m, n);
    for i in 0..k {
        left.set_column(i, &(yp_v.column(i) / tr.s[i]));
    }
    let mut right = DMatrix::zeros(n, m);
    right.rows_mut(0, k).copy_from(&u.transpose());

    // Residuals are Y'(I − V Vᵀ): the fit reproduces Y' on the retained
    // right singular subspace exactly.
    let resid = pair.yp() - &yp_v * v.transpose();
    let raw_omega = &resid * resid.transpose() / (pair.j() as f64 - 1.0);
    finish(left, right, raw_omega, n, k, shrinkage, tr.s)
}

pub fn dmd_fit(pair: &SnapshotPair, n: usize, shrinkage: Shrinkage) -> Result<ReducedVAR> {
    let max = pair.n_obs().min(pair.j());
    if n == 0 || n > max {
        return Err(Error::RankTooLarge { rank: n, max });
    }
    dmd_fit_from_svd(pair, &SortedSvd::new(pair.y())?, n, shrinkage)
}

/// Second moments of a snapshot pair: `YYᵀ`, `Y'Yᵀ`, `Y'Y'ᵀ` and `J`.
#[derive(Debug, Clone)]
pub struct SnapshotMoments {
    pub yy: DMatrix<f64>,
    pub ypy: DMatrix<f64>,
    pub ypyp: DMatrix<f64>,
    pub j: usize,
}

impl SnapshotMoments {
    pub fn from_pair(pair: &SnapshotPair) -> Self {
        Self {
            yy: pair.y() * pair.y().transpose(),
            ypy: pair.yp() * pair.y().transpose(),
            ypyp: pair.yp() * pair.yp().transpose(),
            j: pair.j(),
        }
    }

    /// Moments of the snapshots of an M x (J+1) panel, optionally after
    /// centring each row at its mean over all J+1 periods.
    pub fn from_panel(y: &DMatrix<f64>, demean: bool) -> Result<Self> {
        let t = y.ncols();
        if t < 3 {
            return Err(Error::PanelTooShort { needed: 3, got: t });
        }
        let centred;
        let y = if demean {
            centred = linalg::demean_rows(y);
            &centred
        } else {
            y
        };
        let head = y.columns(0, t - 1);
        let tail = y.columns(1, t - 1);
        let yy = head * head.transpose();
        let ypy = tail * head.transpose();
        let first = y.column(0);
        let last = y.column(t - 1);
        let ypyp = &yy - first * first.transpose() + last * last.transpose();
        Ok(Self { yy, ypy, ypyp, j: t - 1 })
    }

    pub fn n_obs(&self) -> usize {
        self.yy.nrows()
    }
}

/// Rank-N DMD fit from snapshot second moments.
///
/// `YYᵀ = U S² Uᵀ` gives `U` and `S`; with `V = YᵀU S⁻¹` the coefficient is
/// `Y'YᵀU S⁻² Uᵀ` and the residual scatter is `Y'Y'ᵀ − W Wᵀ`, `W = Y'YᵀU S⁻¹`.
pub fn dmd_fit_moments(moments: &SnapshotMoments, n: usize, shrinkage: Shrinkage) -> Result<ReducedVAR> {
    let m = moments.n_obs();
    let max = m.min(moments.j);
    if n == 0 || n > max {
        return Err(Error::RankTooLarge { rank: n, max });
    }
    if moments.j < 2 {
        return Err(Error::PanelTooShort { needed: 3, got: moments.j + 1 });
    }
    let eig = SymmetricEigen::new(linalg::symmetrize(&moments.yy));
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let s: DVector<f64> = DVector::from_iterator(n, order.iter().take(n).map(|&i| eig.eigenvalues[i].max(0.0).sqrt()));
    let top = eig.eigenvalues[order[0]].max(0.0).sqrt();
    // Squaring halves the usable precision, so the zero cut is on s, not s².
    let k = s.iter().take_while(|&&v| v > 1e-7 * top && v > 0.0).count();

    let mut u = DMatrix::zeros(m, k);
    for (dst, &src) in order.iter().take(k).enumerate() {
        u.set_column(dst, &eig.eigenvectors.column(src));
    }
    let ypy_u = &moments.ypy * &u;
    let mut left = DMatrix::zeros(m, n);
    let mut w = DMatrix::zeros(m, k);
    for i in 0..k {
        left.set_column(i, &(ypy_u.column(i) / (s[i] * s[i])));
        w.set_column(i, &(ypy_u.column(i) / s[i]));
    }
    let mut right = DMatrix::zeros(n, m);
    right.rows_mut(0, k).copy_from(&u.transpose());
    let raw_omega = (&moments.ypyp - &w * w.transpose()) / (moments.j as f64 - 1.0);
    finish(left, right, raw_omega, n, k, shrinkage, s)
}

/// Gaussian VAR(1) log-likelihood of `data` under the fit, summed over
/// `t = 2..T`. `Ω` is factorised once per call.
pub fn dmd_loglik(var: &ReducedVAR, data: &PanelData) -> Result<f64> {
    dmd_loglik_matrix(var, data.y())
}

pub(crate) fn dmd_loglik_matrix(var: &ReducedVAR, y: &DMatrix<f64>) -> Result<f64> {
    let resid = var.residuals(y)?;
    let fac = SpdFactor::new(&var.omega).ok_or(Error::SingularOmega)?;
    let m = y.nrows() as f64;
    let periods = resid.ncols() as f64;
    Ok(-0.5 * (periods * (m * (2.0 * PI).ln() + fac.log_det) + fac.quad_form_columns(&resid)))
}

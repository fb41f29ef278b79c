//! Rank-selection diagnostics for the reduced-rank VAR.
//!
//! All candidate ranks share one SVD of the snapshot matrix, so the fits are
//! nested truncations and their residuals are `Y'(I − V_n V_nᵀ)`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dfm::PanelData;
use crate::dmd::{snapshots_from_matrix, SortedSvd, ZERO_SINGULAR_REL};
use crate::error::{Error, Result};
use crate::linalg;

pub const DEFAULT_PLATEAU_TOL: f64 = 0.005;

/// Top `n_max` singular values of `y`, descending.
pub fn singular_spectrum(y: &DMatrix<f64>, n_max: usize) -> Result<Vec<f64>> {
    let max = y.nrows().min(y.ncols());
    if n_max > max {
        return Err(Error::RankTooLarge { rank: n_max, max });
    }
    let mut s = linalg::singular_values_desc(y);
    s.truncate(n_max);
    Ok(s)
}

/// Optimal hard-threshold coefficient for an aspect ratio `β`.
pub fn gd_lambda(beta: f64) -> f64 {
    let root = (beta * beta + 14.0 * beta + 1.0).sqrt();
    (2.0 * (beta + 1.0) + 8.0 * beta / (beta + 1.0 + root)).sqrt()
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GdThreshold {
    pub tau: f64,
    pub lambda: f64,
    pub beta: f64,
    /// `M > T`: computed on the transposed problem, outside the
    /// `β ∈ (0, 1]` regime the threshold is derived for.
    pub outside_regime: bool,
}

/// Singular-value threshold `τ = λ(M/T) √T σ`.
pub fn gavish_donoho(m: usize, t: usize, sigma: f64) -> Result<GdThreshold> {
    if m == 0 || t == 0 {
        return Err(Error::invalid("M and T must be >= 1"));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("noise level must be finite and >= 0, got {sigma}")));
    }
    let (short, long, outside_regime) = if m > t { (t, m, true) } else { (m, t, false) };
    let beta = short as f64 / long as f64;
    let lambda = gd_lambda(beta);
    Ok(GdThreshold {
        tau: lambda * (long as f64).sqrt() * sigma,
        lambda,
        beta,
        outside_regime,
    })
}

/// Penalty weight `((M+T)/(MT)) log(MT/(M+T))` of the information criterion.
pub fn bai_ng_penalty(m: usize, t: usize) -> f64 {
    let (m, t) = (m as f64, t as f64);
    (m + t) / (m * t) * (m * t / (m + t)).ln()
}

/// `IC(n) = V(n) + n · penalty(M, T)`, with `V(n)` the mean squared residual
/// and `(M, T)` the residual dimensions.
pub fn bai_ng_ic(residuals_by_rank: &BTreeMap<usize, DMatrix<f64>>) -> Result<BTreeMap<usize, f64>> {
    if residuals_by_rank.is_empty() {
        return Err(Error::EmptyResiduals);
    }
    let mut out = BTreeMap::new();
    for (&n, resid) in residuals_by_rank {
        let (m, t) = resid.shape();
        if m == 0 || t == 0 {
            return Err(Error::EmptyResiduals);
        }
        let v = resid.norm_squared() / (m * t) as f64;
        out.insert(n, v + n as f64 * bai_ng_penalty(m, t));
    }
    Ok(out)
}

/// Per-row `R²` of residuals against the rows of `target`, and the rows whose
/// total sum of squares is zero.
fn row_r2(target: &DMatrix<f64>, resid: &DMatrix<f64>) -> (Vec<f64>, Vec<usize>) {
    let centred = linalg::demean_rows(target);
    let mut values = Vec::with_capacity(target.nrows());
    let mut zero_rows = Vec::new();
    for i in 0..target.nrows() {
        let tss = centred.row(i).norm_squared();
        let ssr = resid.row(i).norm_squared();
        if tss > 0.0 {
            values.push(1.0 - ssr / tss);
        } else {
            values.push(0.0);
            zero_rows.push(i);
        }
    }
    (values, zero_rows)
}

fn normalized_weights(weights: Option<&[f64]>, m: usize) -> Result<Vec<f64>> {
    match weights {
        None => Ok(vec![1.0; m]),
        Some(w) => {
            if w.len() != m {
                return Err(Error::dims(format!("{} weights for {m} rows", w.len())));
            }
            if w.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
                return Err(Error::invalid("weights must be finite and nonnegative"));
            }
            let sum: f64 = w.iter().sum();
            if sum <= 0.0 {
                return Err(Error::invalid("weights must not all be zero"));
            }
            Ok(w.iter().map(|v| v * m as f64 / sum).collect())
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct R2Values {
    pub values: BTreeMap<usize, f64>,
    /// Rows with zero variance, scored as `R² = 0`.
    pub zero_variance_rows: Vec<usize>,
}

/// Weighted cross-sectional average of per-row `R²`, one entry per rank.
///
/// `targets` holds `y_2..y_T`; each residual matrix has the same shape.
pub fn aggregate_r2(
    targets: &DMatrix<f64>,
    residuals_by_rank: &BTreeMap<usize, DMatrix<f64>>,
    weights: Option<&[f64]>,
) -> Result<R2Values> {
    if residuals_by_rank.is_empty() {
        return Err(Error::EmptyResiduals);
    }
    let m = targets.nrows();
    let w = normalized_weights(weights, m)?;
    let mut values = BTreeMap::new();
    let mut zero_variance_rows = Vec::new();
    for (&n, resid) in residuals_by_rank {
        if resid.shape() != targets.shape() {
            return Err(Error::dims(format!("residuals for rank {n} do not match the target shape")));
        }
        let (r2, zero_rows) = row_r2(targets, resid);
        zero_variance_rows = zero_rows;
        let agg = r2.iter().zip(&w).map(|(r, w)| r * w).sum::<f64>() / m as f64;
        values.insert(n, agg);
    }
    Ok(R2Values {
        values,
        zero_variance_rows,
    })
}

/// `(1/L) Σ_t a_{t+1} a_tᵀ` over residual columns, with its max-abs entry.
pub fn residual_autocov(residuals: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    let l = residuals.ncols();
    if l < 2 {
        return Err(Error::PanelTooShort { needed: 2, got: l });
    }
    let lead = residuals.columns(1, l - 1);
    let lag = residuals.columns(0, l - 1);
    let cov = lead * lag.transpose() / l as f64;
    Ok((linalg::max_abs(&cov), cov))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankConfig {
    #[serde(default = "default_plateau")]
    pub plateau_tol: f64,
    /// Noise level for the Gavish–Donoho threshold; estimated when absent.
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    #[serde(default = "default_true")]
    pub demean: bool,
}

fn default_plateau() -> f64 {
    DEFAULT_PLATEAU_TOL
}

fn default_true() -> bool {
    true
}

impl Default for RankConfig {
    fn default() -> Self {
        Self {
            plateau_tol: DEFAULT_PLATEAU_TOL,
            sigma: None,
            weights: None,
            demean: true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RankReport {
    pub n_max: usize,
    pub singular_values: Vec<f64>,
    pub noise_sigma: f64,
    pub noise_sigma_estimated: bool,
    pub gd: GdThreshold,
    pub gd_rank: usize,
    pub ic_values: BTreeMap<usize, f64>,
    pub ic_argmin: usize,
    /// Includes `n = 0` (the zero forecast) as the baseline of the plateau rule.
    pub r2_values: BTreeMap<usize, f64>,
    pub autocov_values: BTreeMap<usize, f64>,
    pub chosen_n: usize,
    pub flags: Vec<String>,
    pub zero_variance_rows: Vec<usize>,
    pub rationale: String,
}

/// Run every diagnostic for `n = 1..n_max` and choose a rank by the `R²`
/// plateau rule.
pub fn select_rank(panel: &PanelData, n_max: usize, config: &RankConfig) -> Result<RankReport> {
    let (m, t) = (panel.n_obs(), panel.periods());
    if t < 3 {
        return Err(Error::PanelTooShort { needed: 3, got: t });
    }
    let max = m.min(t - 1);
    if n_max == 0 || n_max > max {
        return Err(Error::RankTooLarge { rank: n_max, max });
    }
    if !(config.plateau_tol > 0.0) {
        return Err(Error::invalid("plateau_tol must be > 0"));
    }
    let y = if config.demean { linalg::demean_rows(panel.y()) } else { panel.y().clone() };
    let pair = snapshots_from_matrix(&y)?;
    let j = pair.j();
    let svd = SortedSvd::new(pair.y())?;
    let top = svd.s.get(0).copied().unwrap_or(0.0);
    let nonzero = |v: f64| v > ZERO_SINGULAR_REL * top && v > 0.0;

    let mut residuals = BTreeMap::new();
    residuals.insert(0, pair.yp().clone());
    for n in 1..=n_max {
        let k = (0..n).take_while(|&i| nonzero(svd.s[i])).count();
        let v = svd.v.columns(0, k);
        let resid = pair.yp() - (pair.yp() * v) * v.transpose();
        residuals.insert(n, resid);
    }

    let r2 = aggregate_r2(pair.yp(), &residuals, config.weights.as_deref())?;
    let mut candidates = residuals.clone();
    candidates.remove(&0);
    let ic_values = bai_ng_ic(&candidates)?;
    let ic_argmin = ic_values
        .iter()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(&n, _)| n)
        .unwrap_or(0);
    let mut autocov_values = BTreeMap::new();
    for (&n, resid) in &candidates {
        autocov_values.insert(n, residual_autocov(resid)?.0);
    }

    let (noise_sigma, noise_sigma_estimated) = match config.sigma {
        Some(s) => (s, false),
        None => {
            let tail: f64 = svd.s.iter().skip(n_max).map(|v| v * v).sum();
            let dof = ((m - n_max) * (j - n_max)) as f64;
            (if dof > 0.0 { (tail / dof).sqrt() } else { 0.0 }, true)
        }
    };
    let gd = gavish_donoho(m, j, noise_sigma)?;
    let gd_rank = svd.s.iter().filter(|&&v| nonzero(v) && v > gd.tau).count();

    let mut flags = Vec::new();
    let plateau = (0..n_max).find(|&n| r2.values[&(n + 1)] - r2.values[&n] < config.plateau_tol);
    let chosen_n = match plateau {
        Some(0) => {
            flags.push("no factor structure".to_string());
            0
        }
        Some(n) => n,
        None => {
            flags.push(format!("no R2 plateau up to n_max={n_max}"));
            n_max
        }
    };
    if gd.outside_regime {
        flags.push("Gavish-Donoho threshold outside stated regime (M > T)".to_string());
    }
    if !r2.zero_variance_rows.is_empty() {
        flags.push(format!("{} zero-variance rows scored as R2 = 0", r2.zero_variance_rows.len()));
    }

    let mut rationale = format!(
        "R2 plateau (tol {}) chooses N={chosen_n}; IC argmin N={ic_argmin}; Gavish-Donoho count {gd_rank}",
        config.plateau_tol
    );
    if ic_argmin == chosen_n && gd_rank == chosen_n {
        rationale.push_str("; all criteria agree");
    } else {
        rationale.push_str("; criteria disagree");
    }

    let mut singular_values: Vec<f64> = svd.s.iter().copied().collect();
    singular_values.truncate(singular_values.len().min(n_max.max(10) + 1));

    Ok(RankReport {
        n_max,
        singular_values,
        noise_sigma,
        noise_sigma_estimated,
        gd,
        gd_rank,
        ic_values,
        ic_argmin,
        r2_values: r2.values,
        autocov_values,
        chosen_n,
        flags,
        zero_variance_rows: r2.zero_variance_rows,
        rationale,
    })
}

/// Text table with one column per candidate rank.
pub fn render_table(report: &RankReport) -> String {
    let mut out = String::new();
    let ranks: Vec<usize> = (1..=report.n_max).collect();
    let _ = write!(out, "{:<16}", "N");
    for n in &ranks {
        let _ = write!(out, "{n:>12}");
    }
    out.push('\n');
    let rows: [(&str, &BTreeMap<usize, f64>, bool); 3] = [
        ("R2(N)", &report.r2_values, false),
        ("IC(N)", &report.ic_values, false),
        ("max|E[a a]|", &report.autocov_values, true),
    ];
    for (label, values, sci) in rows {
        let _ = write!(out, "{label:<16}");
        for n in &ranks {
            let v = values[n];
            if sci {
                let _ = write!(out, "{v:>12.1e}");
            } else {
                let _ = write!(out, "{v:>12.4}");
            }
        }
        out.push('\n');
    }
    let _ = writeln!(out, "chosen N = {} ({})", report.chosen_n, report.rationale);
    for flag in &report.flags {
        let _ = writeln!(out, "flag: {flag}");
    }
    out
}

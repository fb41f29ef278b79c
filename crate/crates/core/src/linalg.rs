//! Small dense linear-algebra helpers shared by the model modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0_f64, |acc, (x, y)| acc.max((x - y).abs()))
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.complex_eigenvalues()
        .iter()
        .fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

/// Singular values in descending order.
pub fn singular_values_desc(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Number of singular values above `rel_tol * s_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let s = singular_values_desc(m);
    match s.first() {
        Some(&top) if top > 0.0 => s.iter().filter(|&&v| v > rel_tol * top).count(),
        _ => 0,
    }
}

/// Cholesky factor of a symmetric matrix together with its log-determinant.
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    pub log_det: f64,
}

impl SpdFactor {
    pub fn new(m: &DMatrix<f64>) -> Option<Self> {
        let chol = Cholesky::new(symmetrize(m))?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return None;
        }
        Some(Self { chol, log_det })
    }

    /// `xᵀ M⁻¹ x` via one triangular solve.
    pub fn quad_form(&self, x: &DVector<f64>) -> f64 {
        let l = self.chol.l_dirty();
        let mut z = x.clone();
        l.solve_lower_triangular_mut(&mut z);
        z.norm_squared()
    }

    /// Sum of `x_kᵀ M⁻¹ x_k` over the columns of `x`.
    pub fn quad_form_columns(&self, x: &DMatrix<f64>) -> f64 {
        let l = self.chol.l_dirty();
        let mut z = x.clone();
        l.solve_lower_triangular_mut(&mut z);
        z.norm_squared()
    }
}

/// Solve `m x = rhs` for square `m` via LU; fails when `m` is singular.
pub fn solve(m: &DMatrix<f64>, rhs: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::NumericalSingularity(format!("{what} is singular")))
}

/// Row means of a matrix, as a column vector.
pub fn row_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.ncols().max(1) as f64;
    m.column_sum() / n
}

/// Copy of `m` with each row centred at its own mean.
pub fn demean_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mu = row_means(m);
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        col -= &mu;
    }
    out
}

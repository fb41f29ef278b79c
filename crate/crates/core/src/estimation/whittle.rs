//! Frequency-domain (Whittle) Gaussian likelihood for MA panels.

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::dfm::PanelData;
use crate::error::{Error, Result};
use crate::linalg;
use crate::ma::MARepresentation;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone)]
pub struct SpectralModel {
    pub psi: MARepresentation,
    /// Shock covariance, r x r.
    pub sigma_e: DMatrix<f64>,
    pub sigma_v: f64,
}

impl SpectralModel {
    pub fn new(psi: MARepresentation, sigma_e: DMatrix<f64>, sigma_v: f64) -> Result<Self> {
        let r = psi.n_shocks();
        if sigma_e.shape() != (r, r) {
            return Err(Error::dims(format!("shock covariance must be {r}x{r}")));
        }
        if linalg::max_abs_diff(&sigma_e, &sigma_e.transpose()) > 1e-12 * linalg::max_abs(&sigma_e).max(1.0)
            || sigma_e.clone().cholesky().is_none()
        {
            return Err(Error::invalid("shock covariance must be symmetric positive definite"));
        }
        if !(sigma_v >= 0.0 && sigma_v.is_finite()) {
            return Err(Error::invalid(format!("sigma_v must be finite and >= 0, got {sigma_v}")));
        }
        Ok(Self { psi, sigma_e, sigma_v })
    }

    /// Unit shock covariance.
    pub fn standard(psi: MARepresentation, sigma_v: f64) -> Result<Self> {
        let r = psi.n_shocks();
        Self::new(psi, DMatrix::identity(r, r), sigma_v)
    }
}

/// Frequencies entering the sum, with their weights: interior frequencies
/// stand for themselves and their mirror image, Nyquist (even T) only for
/// itself. The zero frequency is dropped because the data are demeaned.
fn frequency_weights(t: usize) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64)> = (1..=(t - 1) / 2).map(|j| (j, 2.0)).collect();
    if t.is_multiple_of(2) {
        out.push((t / 2, 1.0));
    }
    out
}

fn fft_rows(rows: &[Vec<Complex64>], t: usize) -> Vec<Vec<Complex64>> {
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(t);
    rows.iter()
        .map(|r| {
            let mut buf = r.clone();
            fft.process(&mut buf);
            buf
        })
        .collect()
}

/// Whittle log-likelihood `−½ Σ_j [M log 2π + log det S(ω_j) + tr(S(ω_j)⁻¹ I(ω_j))]`
/// over the Fourier frequencies `ω_j = 2πj/T`, `j = 1..T−1`.
pub fn whittle_loglik(data: &PanelData, model: &SpectralModel) -> Result<f64> {
    let (m, t) = (data.n_obs(), data.periods());
    if m != model.psi.n_obs() {
        return Err(Error::dims(format!("data has {m} rows, model has M={}", model.psi.n_obs())));
    }
    if t < 2 {
        return Err(Error::PanelTooShort { needed: 2, got: t });
    }
    let r = model.psi.n_shocks();
    let y = linalg::demean_rows(data.y());

    let data_rows: Vec<Vec<Complex64>> = (0..m)
        .map(|i| y.row(i).iter().map(|&v| Complex64::new(v, 0.0)).collect())
        .collect();
    let d = fft_rows(&data_rows, t);

    // e^{−iωk} is T-periodic in k, so coefficients beyond T fold onto k mod T.
    let mut folded = vec![vec![Complex64::new(0.0, 0.0); t]; m * r];
    for (k, psi) in model.psi.psi().iter().enumerate() {
        for x in 0..r {
            for i in 0..m {
                folded[x * m + i][k % t] += psi[(i, x)];
            }
        }
    }
    let h = fft_rows(&folded, t);
    let chol_e = model.sigma_e.clone().cholesky().ok_or_else(|| Error::invalid("shock covariance is not PD"))?;
    let le = chol_e.l().map(|v| Complex64::new(v, 0.0));
    let var_v = model.sigma_v * model.sigma_v;

    let mut total = 0.0;
    for (j, weight) in frequency_weights(t) {
        let hj = DMatrix::from_fn(m, r, |i, x| h[x * m + i][j]);
        let factor = hj * &le;
        let mut s = &factor * factor.adjoint();
        for i in 0..m {
            s[(i, i)] += var_v;
        }
        let chol = Cholesky::new(s).ok_or(Error::SingularSpectrum { index: j })?;
        let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|z| z.re.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return Err(Error::SingularSpectrum { index: j });
        }
        let mut dj = DVector::from_fn(m, |i, _| d[i][j]);
        chol.l_dirty().solve_lower_triangular_mut(&mut dj);
        let quad = dj.norm_squared() / t as f64;
        total += weight * -0.5 * (m as f64 * LN_2PI + log_det + quad);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn white_noise_four_points() {
        // Direct DFT of a demeaned 4-point series at j = 1 and j = 2.
        let x = [1.0, -2.0, 0.5, 3.0];
        let mean = x.iter().sum::<f64>() / 4.0;
        let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
        let periodogram = |j: usize| {
            let (mut re, mut im) = (0.0, 0.0);
            for (k, v) in c.iter().enumerate() {
                let w = 2.0 * std::f64::consts::PI * (j * k) as f64 / 4.0;
                re += v * w.cos();
                im -= v * w.sin();
            }
            (re * re + im * im) / 4.0
        };
        let expected = 2.0 * -0.5 * (LN_2PI + periodogram(1)) + -0.5 * (LN_2PI + periodogram(2));

        let ma = MARepresentation::new(vec![DMatrix::zeros(1, 1)], DVector::zeros(1)).unwrap();
        let model = SpectralModel::standard(ma, 1.0).unwrap();
        let data = PanelData::new(DMatrix::from_row_slice(1, 4, &x)).unwrap();
        assert_relative_eq!(whittle_loglik(&data, &model).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn singular_spectrum_without_noise() {
        let ma = MARepresentation::new(vec![DMatrix::from_element(2, 1, 1.0)], DVector::zeros(2)).unwrap();
        let model = SpectralModel::standard(ma, 0.0).unwrap();
        let data = PanelData::new(DMatrix::from_fn(2, 8, |i, t| (i + t) as f64)).unwrap();
        assert!(matches!(whittle_loglik(&data, &model), Err(Error::SingularSpectrum { .. })));
    }

    #[test]
    fn frequency_set_covers_nonzero_dft_bins() {
        for t in 2..12 {
            let total: f64 = frequency_weights(t).iter().map(|(_, w)| w).sum();
            assert_eq!(total as usize, t - 1);
        }
    }
}

//! Truncated moving-average (sequence-space) representations of micro panels.
//!
//! `c_t = c_ss + Σ_{j<H} Ψ_j ε_{t−j}` with `Ψ_j = Σ_p J^c_p F^j I^p_e`, where
//! `J^c_p` (M x H) holds the gradients of the cross-section with respect to
//! the future path of input `p`, `I^p_e` (H x r) is the impulse response of
//! that path to each shock and `F` shifts a path one period forward.

use nalgebra::{DMatrix, DVector};

use crate::dfm::{normal_matrix, PanelData, StateSpaceModel};
use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_HORIZON: usize = 300;

/// Relative size of the last coefficient above which truncation is suspect.
const TRUNCATION_WARN_REL: f64 = 0.01;

/// `F^j X`: row `i` of the result is row `i + j` of `x`, zero past the end.
pub fn shift_forward(x: &DMatrix<f64>, j: usize) -> Result<DMatrix<f64>> {
    let h = x.nrows();
    if j > h {
        return Err(Error::invalid(format!("shift {j} exceeds horizon {h}")));
    }
    let mut out = DMatrix::zeros(h, x.ncols());
    if j < h {
        out.rows_mut(0, h - j).copy_from(&x.rows(j, h - j));
    }
    Ok(out)
}

/// The H x H shift-forward matrix (ones on the first superdiagonal).
pub fn shift_matrix(h: usize) -> DMatrix<f64> {
    DMatrix::from_fn(h, h, |i, k| if k == i + 1 { 1.0 } else { 0.0 })
}

/// `(1, ρ, ρ², …, ρ^{H−1})`.
pub fn ar1_irf(rho: f64, h: usize) -> Result<DVector<f64>> {
    if !(rho.abs() < 1.0) {
        return Err(Error::invalid(format!("AR(1) coefficient must satisfy |rho| < 1, got {rho}")));
    }
    let mut out = DVector::zeros(h);
    let mut v = 1.0;
    for i in 0..h {
        out[i] = v;
        v *= rho;
    }
    Ok(out)
}

/// `‖FJ − JF‖_F / ‖FJ‖_F` for a square Jacobian.
pub fn commutability_slackness(j: &DMatrix<f64>) -> Result<f64> {
    let h = j.nrows();
    if j.ncols() != h {
        return Err(Error::dims(format!("Jacobian must be square, got {}x{}", j.nrows(), j.ncols())));
    }
    // (FJ)[i,k] = J[i+1,k] and (JF)[i,k] = J[i,k−1].
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..h {
        for k in 0..h {
            let fj = if i + 1 < h { j[(i + 1, k)] } else { 0.0 };
            let jf = if k > 0 { j[(i, k - 1)] } else { 0.0 };
            num += (fj - jf) * (fj - jf);
            den += fj * fj;
        }
    }
    if den == 0.0 {
        return Err(Error::ZeroDenominator);
    }
    Ok((num / den).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShockSpec {
    pub name: String,
    /// Persistence used when the input IRFs are built from GE Jacobians.
    pub rho: f64,
    /// Impact scale multiplying this shock's IRF column.
    pub scale: f64,
}

/// How an input's path responds to the shocks.
#[derive(Debug, Clone, PartialEq)]
pub enum InputIrf {
    /// `I^p_e` given directly, H x r.
    Direct(DMatrix<f64>),
    /// `I^p_e[:, x] = Σ J^p_x · ar1_irf(ρ_x)` over the listed (shock, Jacobian) pairs.
    General(Vec<(usize, DMatrix<f64>)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputJacobian {
    pub name: String,
    /// `J^c_p`, M x H.
    pub jc: DMatrix<f64>,
    pub irf: InputIrf,
    /// Multiplies `J^c_p`.
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JacobianSet {
    pub horizon: usize,
    pub shocks: Vec<ShockSpec>,
    pub inputs: Vec<InputJacobian>,
}

impl JacobianSet {
    pub fn n_obs(&self) -> Option<usize> {
        self.inputs.first().map(|p| p.jc.nrows())
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.horizon;
        let r = self.shocks.len();
        if h == 0 || r == 0 || self.inputs.is_empty() {
            return Err(Error::invalid("need H >= 1, at least one shock and at least one input"));
        }
        let m = self.inputs[0].jc.nrows();
        for shock in &self.shocks {
            if !(shock.rho.abs() < 1.0) || !shock.scale.is_finite() {
                return Err(Error::invalid(format!(
                    "shock {}: need |rho| < 1 and a finite scale",
                    shock.name
                )));
            }
        }
        for p in &self.inputs {
            if p.jc.ncols() != h {
                return Err(Error::InconsistentHorizon(format!(
                    "J^c for input {} has {} columns, H = {h}",
                    p.name,
                    p.jc.ncols()
                )));
            }
            if p.jc.nrows() != m {
                return Err(Error::dims(format!("J^c for input {} has {} rows, expected {m}", p.name, p.jc.nrows())));
            }
            match &p.irf {
                InputIrf::Direct(i) => {
                    if i.nrows() != h {
                        return Err(Error::InconsistentHorizon(format!(
                            "IRF for input {} has {} rows, H = {h}",
                            p.name,
                            i.nrows()
                        )));
                    }
                    if i.ncols() != r {
                        return Err(Error::dims(format!("IRF for input {} has {} columns, r = {r}", p.name, i.ncols())));
                    }
                }
                InputIrf::General(terms) => {
                    for (x, jac) in terms {
                        if *x >= r {
                            return Err(Error::dims(format!("input {} references shock {x}, r = {r}", p.name)));
                        }
                        if jac.shape() != (h, h) {
                            return Err(Error::InconsistentHorizon(format!(
                                "GE Jacobian of input {} is {}x{}, H = {h}",
                                p.name,
                                jac.nrows(),
                                jac.ncols()
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// `I^p_e` with the shock scales applied, H x r.
    fn input_irf(&self, p: &InputJacobian) -> Result<DMatrix<f64>> {
        let h = self.horizon;
        let mut out = match &p.irf {
            InputIrf::Direct(i) => i.clone(),
            InputIrf::General(terms) => {
                let mut out = DMatrix::zeros(h, self.shocks.len());
                for (x, jac) in terms {
                    let irf = ar1_irf(self.shocks[*x].rho, h)?;
                    let col = jac * irf + out.column(*x);
                    out.set_column(*x, &col);
                }
                out
            }
        };
        for (x, shock) in self.shocks.iter().enumerate() {
            out.column_mut(x).scale_mut(shock.scale);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MARepresentation {
    psi: Vec<DMatrix<f64>>,
    c_ss: DVector<f64>,
    truncation_warning: bool,
}

impl MARepresentation {
    pub fn new(psi: Vec<DMatrix<f64>>, c_ss: DVector<f64>) -> Result<Self> {
        let first = psi.first().ok_or_else(|| Error::invalid("MA representation needs H >= 1"))?;
        let shape = first.shape();
        if shape.0 == 0 || shape.1 == 0 {
            return Err(Error::dims("MA coefficients must be non-empty"));
        }
        if let Some(j) = psi.iter().position(|p| p.shape() != shape) {
            return Err(Error::dims(format!("Psi_{j} is {:?}, Psi_0 is {shape:?}", psi[j].shape())));
        }
        if c_ss.len() != shape.0 {
            return Err(Error::dims(format!("c_ss has length {}, M = {}", c_ss.len(), shape.0)));
        }
        if psi.iter().flat_map(|p| p.iter()).chain(c_ss.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("MA coefficients must be finite"));
        }
        let norms: Vec<f64> = psi.iter().map(|p| p.norm()).collect();
        let peak = norms.iter().fold(0.0_f64, |a, &b| a.max(b));
        let truncation_warning = psi.len() > 1 && norms[norms.len() - 1] > TRUNCATION_WARN_REL * peak;
        Ok(Self {
            psi,
            c_ss,
            truncation_warning,
        })
    }

    pub fn psi(&self) -> &[DMatrix<f64>] {
        &self.psi
    }

    pub fn c_ss(&self) -> &DVector<f64> {
        &self.c_ss
    }

    pub fn horizon(&self) -> usize {
        self.psi.len()
    }

    pub fn n_obs(&self) -> usize {
        self.psi[0].nrows()
    }

    pub fn n_shocks(&self) -> usize {
        self.psi[0].ncols()
    }

    /// Set when the last coefficient is not negligible relative to the largest.
    pub fn truncation_warning(&self) -> bool {
        self.truncation_warning
    }
}

/// `Ψ_j = Σ_p J^c_p F^j I^p_e` for `j = 0..H−1`.
pub fn assemble_ma(jac: &JacobianSet, h: usize, c_ss: Option<DVector<f64>>) -> Result<MARepresentation> {
    if h != jac.horizon {
        return Err(Error::InconsistentHorizon(format!(
            "requested H = {h}, Jacobian set has H = {}",
            jac.horizon
        )));
    }
    jac.validate()?;
    let m = jac.inputs[0].jc.nrows();
    let r = jac.shocks.len();
    let mut psi = vec![DMatrix::zeros(m, r); h];
    for p in &jac.inputs {
        let irf = jac.input_irf(p)?;
        for (j, psi_j) in psi.iter_mut().enumerate() {
            // J^c F^j I = J^c[:, 0..H−j] · I[j..H, :]
            *psi_j += (p.jc.columns(0, h - j) * irf.rows(j, h - j)) * p.scale;
        }
    }
    let c_ss = c_ss.unwrap_or_else(|| DVector::zeros(m));
    MARepresentation::new(psi, c_ss)
}

/// `Ψ_j = G A^j C`, the MA form of a state-space model driven by `w_t`.
pub fn from_state_space(model: &StateSpaceModel, h: usize) -> Result<MARepresentation> {
    if h == 0 {
        return Err(Error::invalid("horizon must be >= 1"));
    }
    let mut psi = Vec::with_capacity(h);
    let mut state = model.c().clone();
    for _ in 0..h {
        psi.push(model.g() * &state);
        state = model.a() * state;
    }
    MARepresentation::new(psi, DVector::zeros(model.n_obs()))
}

/// Noiseless panel `c_t − c_ss` from a shock draw matrix whose column
/// `k` is `ε_{k−(H−1)}`.
fn convolve(ma: &MARepresentation, shocks: &DMatrix<f64>, periods: usize) -> DMatrix<f64> {
    let h = ma.horizon();
    let mut out = DMatrix::zeros(ma.n_obs(), periods);
    for (j, psi) in ma.psi().iter().enumerate() {
        out += psi * shocks.columns(h - 1 - j, periods);
    }
    out
}

fn add_level(mut y: DMatrix<f64>, c_ss: &DVector<f64>) -> DMatrix<f64> {
    for mut col in y.column_iter_mut() {
        col += c_ss;
    }
    y
}

fn mean_row_variance(y: &DMatrix<f64>) -> f64 {
    let t = y.ncols();
    if t < 2 {
        return 0.0;
    }
    let centred = crate::linalg::demean_rows(y);
    centred.norm_squared() / ((t - 1) * y.nrows()) as f64
}

fn draw_shocks(ma: &MARepresentation, periods: usize, seed: u64) -> DMatrix<f64> {
    normal_matrix(ma.n_shocks(), periods + ma.horizon() - 1, seed, rng::STREAM_MA_SHOCKS)
}

/// Simulate `periods` observations with stationary pre-sample shocks and an
/// absolute measurement-error standard deviation.
pub fn simulate_ma(ma: &MARepresentation, periods: usize, seed: u64, sigma_v: f64) -> Result<PanelData> {
    if periods == 0 {
        return Err(Error::invalid("periods must be >= 1"));
    }
    if !(sigma_v >= 0.0 && sigma_v.is_finite()) {
        return Err(Error::invalid(format!("sigma_v must be finite and >= 0, got {sigma_v}")));
    }
    let mut y = convolve(ma, &draw_shocks(ma, periods, seed), periods);
    if sigma_v > 0.0 {
        y += normal_matrix(ma.n_obs(), periods, seed, rng::STREAM_MEASUREMENT) * sigma_v;
    }
    Ok(PanelData::new(add_level(y, ma.c_ss()))?
        .with_provenance(seed, 0)
        .with_meas_error_std(sigma_v))
}

/// Simulate with measurement error calibrated so that its variance is the
/// given share of total variance, averaged over rows.
pub fn simulate_micro_panel(ma: &MARepresentation, periods: usize, seed: u64, meas_error_share: f64) -> Result<PanelData> {
    if periods == 0 {
        return Err(Error::invalid("periods must be >= 1"));
    }
    if !(0.0..1.0).contains(&meas_error_share) {
        return Err(Error::invalid(format!(
            "measurement-error share must lie in [0, 1), got {meas_error_share}"
        )));
    }
    let mut y = convolve(ma, &draw_shocks(ma, periods, seed), periods);
    let signal = mean_row_variance(&y);
    let sigma_v = (meas_error_share / (1.0 - meas_error_share) * signal).sqrt();
    if sigma_v > 0.0 {
        y += normal_matrix(ma.n_obs(), periods, seed, rng::STREAM_MEASUREMENT) * sigma_v;
    }
    Ok(PanelData::new(add_level(y, ma.c_ss()))?
        .with_provenance(seed, 0)
        .with_meas_error_std(sigma_v))
}

/// Deterministic panel after a single shock vector at `t = 0`: `c_t = c_ss + Ψ_t ε`,
/// and `c_ss` once the horizon is exhausted.
pub fn impulse_response_panel(ma: &MARepresentation, impulse: &DVector<f64>, periods: usize) -> Result<PanelData> {
    if impulse.len() != ma.n_shocks() {
        return Err(Error::dims(format!("impulse has {} entries, r = {}", impulse.len(), ma.n_shocks())));
    }
    let mut y = DMatrix::zeros(ma.n_obs(), periods);
    for (t, psi) in ma.psi().iter().take(periods).enumerate() {
        y.set_column(t, &(psi * impulse));
    }
    PanelData::new(add_level(y, ma.c_ss()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn shift_forward_edges() {
        let x = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        assert_eq!(shift_forward(&x, 0).unwrap(), x);
        assert_eq!(shift_forward(&x, 1).unwrap(), DMatrix::from_column_slice(3, 1, &[2.0, 3.0, 0.0]));
        assert_eq!(shift_forward(&x, 3).unwrap(), DMatrix::zeros(3, 1));
        assert!(shift_forward(&x, 4).is_err());
    }

    #[test]
    fn shift_matrix_agrees_with_shift_forward() {
        let x = DMatrix::from_fn(5, 2, |i, k| (i * 3 + k) as f64);
        assert_eq!(shift_matrix(5) * &x, shift_forward(&x, 1).unwrap());
    }

    #[test]
    fn ar1_irfs() {
        assert_eq!(ar1_irf(0.0, 3).unwrap().as_slice(), &[1.0, 0.0, 0.0]);
        let v = ar1_irf(0.9, 3).unwrap();
        assert_relative_eq!(v[2], 0.81, epsilon = 1e-15);
        assert_eq!(ar1_irf(-0.5, 4).unwrap().as_slice(), &[1.0, -0.5, 0.25, -0.125]);
        assert!(ar1_irf(1.0, 3).is_err());
    }

    #[test]
    fn slackness_of_commuting_matrices() {
        assert_eq!(commutability_slackness(&DMatrix::identity(6, 6)).unwrap(), 0.0);
        let toeplitz = DMatrix::from_fn(6, 6, |i, k| if k >= i { 0.7_f64.powi((k - i) as i32) } else { 0.0 });
        assert!(commutability_slackness(&toeplitz).unwrap() < 1e-12);
        assert!(matches!(
            commutability_slackness(&DMatrix::zeros(4, 4)),
            Err(Error::ZeroDenominator)
        ));
    }

    fn single_input(jc: DMatrix<f64>, irf: DMatrix<f64>) -> JacobianSet {
        JacobianSet {
            horizon: jc.ncols(),
            shocks: vec![ShockSpec {
                name: "e".into(),
                rho: 0.0,
                scale: 1.0,
            }],
            inputs: vec![InputJacobian {
                name: "p".into(),
                jc,
                irf: InputIrf::Direct(irf),
                scale: 1.0,
            }],
        }
    }

    #[test]
    fn delayed_impulse_lands_at_its_lag() {
        // Only the impact gradient is nonzero and the input moves k periods
        // after the shock: Ψ_j is nonzero only at j = k.
        let (h, k) = (6, 2);
        let mut jc = DMatrix::zeros(3, h);
        jc.set_column(0, &DVector::from_vec(vec![1.0, -2.0, 0.5]));
        let mut irf = DMatrix::zeros(h, 1);
        irf[(k, 0)] = 1.0;
        let ma = assemble_ma(&single_input(jc.clone(), irf), h, None).unwrap();
        for (j, psi) in ma.psi().iter().enumerate() {
            if j == k {
                assert_eq!(psi.column(0), jc.column(0));
            } else {
                assert!(psi.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn horizon_mismatch_is_reported() {
        let jac = single_input(DMatrix::zeros(2, 4), DMatrix::zeros(4, 1));
        assert!(matches!(assemble_ma(&jac, 5, None), Err(Error::InconsistentHorizon(_))));
        let bad = single_input(DMatrix::zeros(2, 4), DMatrix::zeros(3, 1));
        assert!(matches!(assemble_ma(&bad, 4, None), Err(Error::InconsistentHorizon(_))));
    }

    #[test]
    fn zero_coefficients_give_constant_panel() {
        let c_ss = DVector::from_vec(vec![1.5, -0.5]);
        let ma = MARepresentation::new(vec![DMatrix::zeros(2, 1); 4], c_ss.clone()).unwrap();
        let panel = simulate_micro_panel(&ma, 30, 1, 0.0).unwrap();
        for col in panel.y().column_iter() {
            assert_eq!(col, c_ss);
        }
    }

    #[test]
    fn state_space_coefficients() {
        let model = StateSpaceModel::new(
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 2.0),
            DMatrix::from_column_slice(2, 1, &[1.0, 3.0]),
            0.0,
        )
        .unwrap();
        let ma = from_state_space(&model, 4).unwrap();
        assert_relative_eq!(ma.psi()[3][(1, 0)], 3.0 * 0.125 * 2.0, epsilon = 1e-15);
        assert!(ma.truncation_warning());
        assert!(!from_state_space(&model, 10).unwrap().truncation_warning());
    }
}

use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::params::{ParameterVector, Target};
use crate::dfm::{self, PanelData, StateSpaceModel};
use crate::dmd::{self, Shrinkage, SnapshotMoments};
use crate::error::{Error, Result};
use crate::linalg;
use crate::ma::{self, JacobianSet, MARepresentation};
use crate::rng;

/// Template that parameter values are written into.
#[derive(Debug, Clone, PartialEq)]
pub enum Generator {
    Dfm(StateSpaceModel),
    Ma {
        jacobians: JacobianSet,
        c_ss: Option<DVector<f64>>,
        sigma_v: f64,
    },
}

/// A generator with parameter values applied.
#[derive(Debug, Clone)]
pub enum Instance {
    Dfm(StateSpaceModel),
    Ma { ma: MARepresentation, sigma_v: f64 },
}

impl Instance {
    pub fn n_obs(&self) -> usize {
        match self {
            Instance::Dfm(m) => m.n_obs(),
            Instance::Ma { ma, .. } => ma.n_obs(),
        }
    }

    /// Simulate `periods` observations; `burn_in` applies to state-space models.
    pub fn simulate(&self, periods: usize, burn_in: usize, seed: u64) -> Result<PanelData> {
        match self {
            Instance::Dfm(model) => dfm::simulate_dfm(model, periods, burn_in, seed, false),
            Instance::Ma { ma, sigma_v } => ma::simulate_ma(ma, periods, seed, *sigma_v),
        }
    }
}

/// Moments of a standard-normal measurement-error draw, reused across
/// parameter values when the simulation seed is fixed.
#[derive(Debug)]
struct NoiseMoments {
    key: (u64, usize, usize, bool),
    v: DMatrix<f64>,
    hh: DMatrix<f64>,
    th: DMatrix<f64>,
    tt: DMatrix<f64>,
}

impl NoiseMoments {
    fn new(seed: u64, m: usize, j: usize, demean: bool) -> Self {
        let mut v = dfm::normal_matrix(m, j + 1, seed, rng::STREAM_MEASUREMENT);
        if demean {
            v = linalg::demean_rows(&v);
        }
        let head = v.columns(0, j);
        let tail = v.columns(1, j);
        let hh = head * head.transpose();
        let th = tail * head.transpose();
        let (first, last) = (v.column(0), v.column(j));
        let tt = &hh - first * first.transpose() + last * last.transpose();
        Self {
            key: (seed, m, j, demean),
            v,
            hh,
            th,
            tt,
        }
    }
}

/// Maps a parameter vector to a simulated panel and the reduced-rank fit
/// that scores the data.
#[derive(Debug)]
pub struct GeneratorBinding {
    pub generator: Generator,
    /// One target per parameter, in parameter order.
    pub targets: Vec<Target>,
    /// Snapshot count J; J+1 periods are simulated.
    pub sim_periods: usize,
    pub sim_burn_in: usize,
    pub rank: usize,
    pub base_seed: u64,
    pub common_random_numbers: bool,
    /// Centre simulated and observed rows at their own means before fitting.
    pub demean: bool,
    pub shrinkage: Shrinkage,
    /// MA truncation used when a state-space generator feeds the Whittle likelihood.
    pub spectral_horizon: usize,
    /// Compute simulated moments from the latent path instead of the full panel.
    pub latent_fast_path: bool,
    cache: Mutex<Option<Arc<NoiseMoments>>>,
}

impl Clone for GeneratorBinding {
    fn clone(&self) -> Self {
        Self {
            generator: self.generator.clone(),
            targets: self.targets.clone(),
            sim_periods: self.sim_periods,
            sim_burn_in: self.sim_burn_in,
            rank: self.rank,
            base_seed: self.base_seed,
            common_random_numbers: self.common_random_numbers,
            demean: self.demean,
            shrinkage: self.shrinkage,
            spectral_horizon: self.spectral_horizon,
            latent_fast_path: self.latent_fast_path,
            cache: Mutex::new(None),
        }
    }
}

impl GeneratorBinding {
    pub fn new(generator: Generator, targets: Vec<Target>, sim_periods: usize, rank: usize) -> Result<Self> {
        let binding = Self {
            generator,
            targets,
            sim_periods,
            sim_burn_in: 200,
            rank,
            base_seed: 0,
            common_random_numbers: true,
            demean: true,
            shrinkage: Shrinkage::default(),
            spectral_horizon: ma::DEFAULT_HORIZON,
            latent_fast_path: true,
            cache: Mutex::new(None),
        };
        binding.validate()?;
        Ok(binding)
    }

    pub fn with_seed(&self, base_seed: u64) -> Self {
        let mut out = self.clone();
        out.base_seed = base_seed;
        out
    }

    pub fn n_obs(&self) -> usize {
        match &self.generator {
            Generator::Dfm(m) => m.n_obs(),
            Generator::Ma { jacobians, .. } => jacobians.n_obs().unwrap_or(0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sim_periods < 2 {
            return Err(Error::Config("simulation length J must be >= 2".into()));
        }
        if self.rank == 0 || self.rank > self.n_obs().min(self.sim_periods) {
            return Err(Error::RankTooLarge {
                rank: self.rank,
                max: self.n_obs().min(self.sim_periods),
            });
        }
        if self.targets.is_empty() {
            return Err(Error::Config("binding has no parameter targets".into()));
        }
        match &self.generator {
            Generator::Dfm(model) => {
                for t in &self.targets {
                    match t {
                        Target::Entry { matrix, row, col } => {
                            let shape = dfm_matrix(model, *matrix).shape();
                            if *row >= shape.0 || *col >= shape.1 {
                                return Err(Error::Config(format!("target {t} is outside a {}x{} matrix", shape.0, shape.1)));
                            }
                        }
                        Target::Diagonal { .. } | Target::Scale { .. } | Target::SigmaV => {}
                        _ => return Err(Error::Config(format!("target {t} does not apply to a state-space generator"))),
                    }
                }
            }
            Generator::Ma { jacobians, .. } => {
                jacobians.validate()?;
                for t in &self.targets {
                    let ok = match t {
                        Target::SigmaV => true,
                        Target::ShockRho(n) | Target::ShockScale(n) => jacobians.shocks.iter().any(|s| &s.name == n),
                        Target::InputScale(n) => jacobians.inputs.iter().any(|p| &p.name == n),
                        _ => false,
                    };
                    if !ok {
                        return Err(Error::Config(format!("target {t} does not match the Jacobian set")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Write parameter values into the template.
    pub fn instantiate(&self, values: &[f64]) -> Result<Instance> {
        if values.len() != self.targets.len() {
            return Err(Error::dims(format!("{} values for {} targets", values.len(), self.targets.len())));
        }
        match &self.generator {
            Generator::Dfm(template) => {
                let mut a = template.a().clone();
                let mut c = template.c().clone();
                let mut g = template.g().clone();
                let mut sigma_v = template.sigma_v();
                for (t, &v) in self.targets.iter().zip(values) {
                    match t {
                        Target::Entry { matrix, row, col } => {
                            pick_mut(*matrix, &mut a, &mut c, &mut g)[(*row, *col)] = v;
                        }
                        Target::Diagonal { matrix } => pick_mut(*matrix, &mut a, &mut c, &mut g).fill_diagonal(v),
                        Target::Scale { matrix } => {
                            let scaled = dfm_matrix(template, *matrix) * v;
                            pick_mut(*matrix, &mut a, &mut c, &mut g).copy_from(&scaled);
                        }
                        Target::SigmaV => sigma_v = v,
                        _ => return Err(Error::Config(format!("target {t} does not apply to a state-space generator"))),
                    }
                }
                Ok(Instance::Dfm(StateSpaceModel::new(a, c, g, sigma_v)?))
            }
            Generator::Ma {
                jacobians,
                c_ss,
                sigma_v,
            } => {
                let mut jac = jacobians.clone();
                let mut sigma_v = *sigma_v;
                for (t, &v) in self.targets.iter().zip(values) {
                    match t {
                        Target::SigmaV => sigma_v = v,
                        Target::ShockRho(n) => shock_mut(&mut jac, n)?.rho = v,
                        Target::ShockScale(n) => shock_mut(&mut jac, n)?.scale = v,
                        Target::InputScale(n) => {
                            jac.inputs
                                .iter_mut()
                                .find(|p| &p.name == n)
                                .ok_or_else(|| Error::Config(format!("unknown input {n}")))?
                                .scale = v
                        }
                        _ => return Err(Error::Config(format!("target {t} does not apply to an MA generator"))),
                    }
                }
                if !(sigma_v >= 0.0 && sigma_v.is_finite()) {
                    return Err(Error::invalid(format!("sigma_v must be >= 0, got {sigma_v}")));
                }
                let ma = ma::assemble_ma(&jac, jac.horizon, c_ss.clone())?;
                Ok(Instance::Ma { ma, sigma_v })
            }
        }
    }

    /// Seed of the simulated panel at these parameter values.
    pub fn simulation_seed(&self, values: &[f64]) -> u64 {
        if self.common_random_numbers {
            return self.base_seed;
        }
        values
            .iter()
            .fold(rng::mix64(self.base_seed), |acc, v| rng::mix64(acc ^ v.to_bits()))
    }

    /// The J+1-period panel the likelihood approximation is fitted to.
    pub fn simulate_panel(&self, values: &[f64]) -> Result<PanelData> {
        let inst = self.instantiate(values)?;
        inst.simulate(self.sim_periods + 1, self.sim_burn_in, self.simulation_seed(values))
    }

    /// Snapshot moments of the simulated panel (demeaned if configured).
    pub fn simulation_moments(&self, values: &[f64]) -> Result<SnapshotMoments> {
        let inst = self.instantiate(values)?;
        let seed = self.simulation_seed(values);
        match &inst {
            Instance::Dfm(model) if self.latent_fast_path => self.latent_moments(model, seed),
            _ => {
                let panel = inst.simulate(self.sim_periods + 1, self.sim_burn_in, seed)?;
                SnapshotMoments::from_panel(panel.y(), self.demean)
            }
        }
    }

    fn noise(&self, seed: u64, m: usize) -> Arc<NoiseMoments> {
        let key = (seed, m, self.sim_periods, self.demean);
        let mut guard = self.cache.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(hit) = guard.as_ref().filter(|c| c.key == key) {
            return Arc::clone(hit);
        }
        let fresh = Arc::new(NoiseMoments::new(seed, m, self.sim_periods, self.demean));
        if self.common_random_numbers {
            *guard = Some(Arc::clone(&fresh));
        }
        fresh
    }

    // Y = G X + σ V, so every M x M moment follows from N x N and N x M
    // products plus the (cached) moments of V.
    fn latent_moments(&self, model: &StateSpaceModel, seed: u64) -> Result<SnapshotMoments> {
        let j = self.sim_periods;
        let mut x = dfm::latent_path(model, j + 1, self.sim_burn_in, seed);
        if self.demean {
            x = linalg::demean_rows(&x);
        }
        let n = x.nrows();
        // Rows: x_t, then x_{t+1} (zero at t = J), then x_{t-1} (zero at t = 0).
        // One product against the full noise block then yields every lagged
        // cross moment; strided views make nalgebra's products much slower.
        let mut z = DMatrix::zeros(3 * n, j + 1);
        z.rows_mut(0, n).copy_from(&x);
        z.view_mut((n, 0), (n, j)).copy_from(&x.columns(1, j));
        z.view_mut((2 * n, 1), (n, j)).copy_from(&x.columns(0, j));
        let (x0, xj) = (x.column(0), x.column(j));

        let zx = &z * x.transpose();
        let xx_full = zx.rows(0, n).into_owned();
        let xx_th = zx.rows(n, n).into_owned();
        let xx_hh = &xx_full - xj * xj.transpose();
        let xx_tt = &xx_full - x0 * x0.transpose();
        let g = model.g();
        let mut yy = g * xx_hh * g.transpose();
        let mut ypy = g * xx_th * g.transpose();
        let mut ypyp = g * xx_tt * g.transpose();

        let sigma = model.sigma_v();
        if sigma > 0.0 {
            let noise = self.noise(seed, model.n_obs());
            let w = &noise.v * z.transpose();
            let p = w.columns(0, n);
            let (v0, vj) = (noise.v.column(0), noise.v.column(j));
            // Each block is V x Z-block^T, i.e. the transpose of the X V^T form.
            let vx_hh = p - vj * xj.transpose();
            let vx_tt = p - v0 * x0.transpose();
            let v_lead = w.columns(n, n);
            let v_lag = w.columns(2 * n, n);

            let cross_hh = vx_hh * g.transpose() * sigma;
            let cross_tt = vx_tt * g.transpose() * sigma;
            yy += &cross_hh + cross_hh.transpose() + &noise.hh * (sigma * sigma);
            ypy += (v_lead * g.transpose() * sigma).transpose()
                + v_lag * g.transpose() * sigma
                + &noise.th * (sigma * sigma);
            ypyp += &cross_tt + cross_tt.transpose() + &noise.tt * (sigma * sigma);
        }
        Ok(SnapshotMoments {
            yy: linalg::symmetrize(&yy),
            ypy,
            ypyp: linalg::symmetrize(&ypyp),
            j,
        })
    }
}

fn dfm_matrix(model: &StateSpaceModel, which: char) -> &DMatrix<f64> {
    match which {
        'A' => model.a(),
        'C' => model.c(),
        _ => model.g(),
    }
}

fn pick_mut<'a>(
    which: char,
    a: &'a mut DMatrix<f64>,
    c: &'a mut DMatrix<f64>,
    g: &'a mut DMatrix<f64>,
) -> &'a mut DMatrix<f64> {
    match which {
        'A' => a,
        'C' => c,
        _ => g,
    }
}

fn shock_mut<'a>(jac: &'a mut JacobianSet, name: &str) -> Result<&'a mut ma::ShockSpec> {
    jac.shocks
        .iter_mut()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::Config(format!("unknown shock {name}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalStatus {
    Ok,
    OutOfBounds,
    /// The parameters map outside the stable region (or are otherwise inadmissible).
    Unstable,
    /// The fit or the scoring failed numerically.
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct LoglikEval {
    pub value: f64,
    pub status: EvalStatus,
    pub message: Option<String>,
}

impl LoglikEval {
    fn rejected(status: EvalStatus, message: String) -> Self {
        Self {
            value: f64::NEG_INFINITY,
            status,
            message: Some(message),
        }
    }
}

/// Observed data prepared once for repeated scoring.
#[derive(Debug, Clone)]
pub struct PreparedData {
    y: DMatrix<f64>,
}

impl PreparedData {
    pub fn new(data: &PanelData, binding: &GeneratorBinding) -> Result<Self> {
        if data.n_obs() != binding.n_obs() {
            return Err(Error::dims(format!(
                "data has {} rows, generator has M={}",
                data.n_obs(),
                binding.n_obs()
            )));
        }
        if data.periods() < 2 {
            return Err(Error::PanelTooShort { needed: 2, got: data.periods() });
        }
        let y = if binding.demean { linalg::demean_rows(data.y()) } else { data.y().clone() };
        Ok(Self { y })
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }
}

/// Simulate at θ, fit the rank-N VAR(1) by DMD and score the data with it.
/// Inadmissible θ gives `−∞` with a status instead of an error.
pub fn approx_loglik_values(values: &[f64], data: &PreparedData, binding: &GeneratorBinding) -> LoglikEval {
    let moments = match binding.simulation_moments(values) {
        Ok(m) => m,
        Err(e) => {
            let status = match e {
                Error::NotStationary { .. } | Error::InvalidArgument(_) => EvalStatus::Unstable,
                _ => EvalStatus::Failed,
            };
            return LoglikEval::rejected(status, e.to_string());
        }
    };
    let scored = dmd::dmd_fit_moments(&moments, binding.rank, binding.shrinkage)
        .and_then(|fit| dmd::dmd_loglik_matrix(&fit, data.y()));
    match scored {
        Ok(value) if value.is_finite() => LoglikEval {
            value,
            status: EvalStatus::Ok,
            message: None,
        },
        Ok(value) => LoglikEval::rejected(EvalStatus::Failed, format!("non-finite likelihood {value}")),
        Err(e) => LoglikEval::rejected(EvalStatus::Failed, e.to_string()),
    }
}

pub fn approx_loglik(theta: &ParameterVector, data: &PanelData, binding: &GeneratorBinding) -> Result<LoglikEval> {
    if theta.len() != binding.targets.len() {
        return Err(Error::dims(format!(
            "{} parameters for {} targets",
            theta.len(),
            binding.targets.len()
        )));
    }
    let prepared = PreparedData::new(data, binding)?;
    Ok(approx_loglik_values(&theta.values(), &prepared, binding))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_abs, max_abs_diff};

    fn binding(n: usize, m: usize, j: usize) -> GeneratorBinding {
        let a = DMatrix::from_fn(n, n, |i, k| if i == k { 0.6 - 0.1 * i as f64 } else { 0.05 });
        let g = DMatrix::from_fn(m, n, |i, k| ((i * 7 + k * 3) as f64).sin() + 0.3);
        let model = StateSpaceModel::new(a, DMatrix::identity(n, n), g, 0.4).unwrap();
        let targets = vec!["A[0,0]".parse().unwrap(), "sigma_v".parse().unwrap()];
        GeneratorBinding::new(Generator::Dfm(model), targets, j, n).unwrap()
    }

    #[test]
    fn latent_fast_path_matches_explicit_panel() {
        for demean in [false, true] {
            let mut fast = binding(2, 6, 50).with_seed(11);
            fast.demean = demean;
            let mut slow = fast.clone();
            slow.latent_fast_path = false;
            let values = [0.55, 0.3];
            let (a, b) = (fast.simulation_moments(&values).unwrap(), slow.simulation_moments(&values).unwrap());
            let scale = max_abs(&b.yy);
            assert!(max_abs_diff(&a.yy, &b.yy) < 1e-10 * scale, "demean={demean}");
            assert!(max_abs_diff(&a.ypy, &b.ypy) < 1e-10 * scale, "demean={demean}");
            assert!(max_abs_diff(&a.ypyp, &b.ypyp) < 1e-10 * scale, "demean={demean}");
        }
    }

    #[test]
    fn loglik_is_deterministic_and_flags_instability() {
        let b = binding(1, 8, 400).with_seed(3);
        let inst = b.instantiate(&[0.6, 0.4]).unwrap();
        let data = inst.simulate(60, 100, 9).unwrap();
        let prepared = PreparedData::new(&data, &b).unwrap();
        let first = approx_loglik_values(&[0.5, 0.35], &prepared, &b);
        let again = approx_loglik_values(&[0.5, 0.35], &prepared, &b.clone());
        assert_eq!(first.status, EvalStatus::Ok);
        assert_eq!(first.value, again.value);

        let unstable = approx_loglik_values(&[1.2, 0.4], &prepared, &b);
        assert_eq!(unstable.status, EvalStatus::Unstable);
        assert_eq!(unstable.value, f64::NEG_INFINITY);
    }
}

use serde::Serialize;

use super::binding::{approx_loglik_values, GeneratorBinding, Instance, PreparedData};
use super::mcmc::{rwmh, Chain, MCMCConfig};
use super::optimize::{nelder_mead, NelderMeadConfig, OptimResult};
use super::params::ParameterVector;
use super::whittle::{whittle_loglik, SpectralModel};
use crate::dfm::PanelData;
use crate::error::{Error, Result};
use crate::ma;

#[derive(Debug, Clone, Serialize)]
pub struct MleFit {
    pub theta: ParameterVector,
    pub loglik: f64,
    pub initial_loglik: f64,
    pub converged: bool,
    pub evals: usize,
    /// The objective never moved: the parameters are likely unidentified.
    pub no_improvement: bool,
    /// Names of parameters that ended on a bound.
    pub at_bound: Vec<String>,
    /// Best log-likelihood after each evaluation.
    pub trace: Vec<f64>,
}

fn check_theta(init: &ParameterVector, binding: &GeneratorBinding) -> Result<()> {
    if init.len() != binding.targets.len() {
        return Err(Error::dims(format!(
            "{} parameters for {} targets",
            init.len(),
            binding.targets.len()
        )));
    }
    Ok(())
}

fn into_fit(init: &ParameterVector, res: OptimResult) -> Result<MleFit> {
    let names = init.names();
    Ok(MleFit {
        theta: init.with_values(&res.x)?,
        loglik: res.f,
        initial_loglik: res.initial_f,
        converged: res.converged,
        evals: res.evals,
        no_improvement: res.no_improvement,
        at_bound: res.at_bound.iter().map(|&i| names[i].clone()).collect(),
        trace: res.trace,
    })
}

/// Maximise the simulated DMD likelihood over the parameter box. Common
/// random numbers are always on here so the objective is smooth in θ.
pub fn mle_fit(
    data: &PanelData,
    binding: &GeneratorBinding,
    init: &ParameterVector,
    config: &NelderMeadConfig,
) -> Result<MleFit> {
    check_theta(init, binding)?;
    let mut binding = binding.clone();
    binding.common_random_numbers = true;
    let prepared = PreparedData::new(data, &binding)?;
    let res = nelder_mead(
        |x| approx_loglik_values(x, &prepared, &binding).value,
        &init.values(),
        &init.bounds(),
        config,
    )?;
    into_fit(init, res)
}

/// The spectral model implied by a parameter vector: state-space generators
/// are expanded to `spectral_horizon` MA coefficients with unit shocks.
pub fn spectral_model(binding: &GeneratorBinding, values: &[f64]) -> Result<SpectralModel> {
    match binding.instantiate(values)? {
        Instance::Dfm(model) => {
            SpectralModel::standard(ma::from_state_space(&model, binding.spectral_horizon)?, model.sigma_v())
        }
        Instance::Ma { ma, sigma_v } => SpectralModel::standard(ma, sigma_v),
    }
}

pub fn whittle_objective(values: &[f64], data: &PanelData, binding: &GeneratorBinding) -> f64 {
    spectral_model(binding, values)
        .and_then(|model| whittle_loglik(data, &model))
        .unwrap_or(f64::NEG_INFINITY)
}

/// Maximise the Whittle likelihood over the parameter box.
pub fn whittle_fit(
    data: &PanelData,
    binding: &GeneratorBinding,
    init: &ParameterVector,
    config: &NelderMeadConfig,
) -> Result<MleFit> {
    check_theta(init, binding)?;
    if data.n_obs() != binding.n_obs() {
        return Err(Error::dims(format!("data has {} rows, generator has M={}", data.n_obs(), binding.n_obs())));
    }
    let res = nelder_mead(
        |x| whittle_objective(x, data, binding),
        &init.values(),
        &init.bounds(),
        config,
    )?;
    into_fit(init, res)
}

/// Posterior sampling with the simulated DMD likelihood and a flat prior on
/// the parameter box.
pub fn rwmh_sample(
    data: &PanelData,
    binding: &GeneratorBinding,
    init: &ParameterVector,
    config: &MCMCConfig,
) -> Result<Chain> {
    check_theta(init, binding)?;
    let prepared = PreparedData::new(data, binding)?;
    rwmh(|x| approx_loglik_values(x, &prepared, binding).value, init, config)
}

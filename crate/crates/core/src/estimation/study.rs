//! Monte Carlo harness: repeated simulate-and-estimate at a known truth.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::binding::GeneratorBinding;
use super::fit::{mle_fit, rwmh_sample, whittle_fit};
use super::mcmc::MCMCConfig;
use super::optimize::NelderMeadConfig;
use super::params::ParameterVector;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Estimator {
    Mle(NelderMeadConfig),
    Rwmh(MCMCConfig),
    WhittleMle(NelderMeadConfig),
}

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub replications: usize,
    pub master_seed: u64,
    /// Length of each synthetic dataset.
    pub data_periods: usize,
    pub data_burn_in: usize,
    pub estimator: Estimator,
}

#[derive(Debug, Clone, Serialize)]
pub struct Replication {
    pub index: usize,
    pub data_seed: u64,
    pub binding_seed: u64,
    /// Point estimate (posterior mean for the sampler); `None` on failure.
    pub estimate: Option<Vec<f64>>,
    pub loglik: Option<f64>,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamSummary {
    pub name: String,
    pub truth: f64,
    pub mean: f64,
    pub std: f64,
    pub bias: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyTable {
    pub replications: Vec<Replication>,
    pub summary: Vec<ParamSummary>,
    pub succeeded: usize,
    pub converged: usize,
    pub failure_rate: f64,
}

fn run_one(
    index: usize,
    binding: &GeneratorBinding,
    truth: &ParameterVector,
    init: &ParameterVector,
    config: &StudyConfig,
) -> Replication {
    let data_seed = rng::derive_seed(config.master_seed, 2 * index as u64);
    let binding_seed = rng::derive_seed(config.master_seed, 2 * index as u64 + 1);
    let outcome = (|| -> Result<(Vec<f64>, Option<f64>, bool)> {
        let inst = binding.instantiate(&truth.values())?;
        let data = inst.simulate(config.data_periods, config.data_burn_in, data_seed)?;
        let local = binding.with_seed(binding_seed);
        match &config.estimator {
            Estimator::Mle(nm) => {
                let fit = mle_fit(&data, &local, init, nm)?;
                Ok((fit.theta.values(), Some(fit.loglik), fit.converged))
            }
            Estimator::WhittleMle(nm) => {
                let fit = whittle_fit(&data, &local, init, nm)?;
                Ok((fit.theta.values(), Some(fit.loglik), fit.converged))
            }
            Estimator::Rwmh(mc) => {
                let mc = MCMCConfig {
                    seed: rng::derive_seed(mc.seed, index as u64),
                    ..mc.clone()
                };
                let chain = rwmh_sample(&data, &local, init, &mc)?;
                Ok((chain.summary().mean, None, true))
            }
        }
    })();
    match outcome {
        Ok((estimate, loglik, converged)) => Replication {
            index,
            data_seed,
            binding_seed,
            estimate: Some(estimate),
            loglik,
            converged,
            error: None,
        },
        Err(e) => Replication {
            index,
            data_seed,
            binding_seed,
            estimate: None,
            loglik: None,
            converged: false,
            error: Some(e.to_string()),
        },
    }
}

/// Simulate `replications` datasets at `truth` and estimate on each.
///
/// Replication `i` draws its data from seed `derive(master, 2i)` and its
/// simulation draws from `derive(master, 2i+1)`, so results do not depend on
/// the number of worker threads. The estimator starts from `init`, or from
/// the truth when `init` is `None`.
pub fn monte_carlo_study(
    binding: &GeneratorBinding,
    truth: &ParameterVector,
    init: Option<&ParameterVector>,
    config: &StudyConfig,
) -> Result<StudyTable> {
    if config.replications == 0 {
        return Err(Error::Config("replications must be >= 1".into()));
    }
    if truth.len() != binding.targets.len() {
        return Err(Error::dims(format!("{} parameters for {} targets", truth.len(), binding.targets.len())));
    }
    let init = init.unwrap_or(truth);
    let replications: Vec<Replication> = (0..config.replications)
        .into_par_iter()
        .map(|i| run_one(i, binding, truth, init, config))
        .collect();

    let ok: Vec<&Vec<f64>> = replications.iter().filter_map(|r| r.estimate.as_ref()).collect();
    let n = ok.len();
    let summary = truth
        .params()
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let mean = ok.iter().map(|e| e[k]).sum::<f64>() / n.max(1) as f64;
            let var = if n > 1 {
                ok.iter().map(|e| (e[k] - mean).powi(2)).sum::<f64>() / (n - 1) as f64
            } else {
                0.0
            };
            ParamSummary {
                name: p.name.clone(),
                truth: p.value,
                mean: if n > 0 { mean } else { f64::NAN },
                std: var.sqrt(),
                bias: if n > 0 { mean - p.value } else { f64::NAN },
            }
        })
        .collect();
    let converged = replications.iter().filter(|r| r.converged).count();
    Ok(StudyTable {
        succeeded: n,
        converged,
        failure_rate: (config.replications - n) as f64 / config.replications as f64,
        replications,
        summary,
    })
}

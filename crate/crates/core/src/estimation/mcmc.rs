//! Adaptive random-walk Metropolis–Hastings with a flat prior on a box.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::ParameterVector;
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MCMCConfig {
    /// Total steps, burn-in included.
    pub steps: usize,
    pub burn_in: usize,
    pub target_accept: f64,
    /// Steps between adaptation updates during burn-in.
    pub adapt_interval: usize,
    /// Initial proposal standard deviation as a fraction of each bound width.
    pub initial_step_scale: f64,
    pub seed: u64,
}

impl Default for MCMCConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            burn_in: 1000,
            target_accept: 0.234,
            adapt_interval: 50,
            initial_step_scale: 0.05,
            seed: 0,
        }
    }
}

impl MCMCConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.burn_in >= self.steps {
            return Err(Error::invalid(format!(
                "need 0 <= burn_in < steps, got burn_in={} steps={}",
                self.burn_in, self.steps
            )));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::invalid("target_accept must lie in (0, 1)"));
        }
        if self.adapt_interval == 0 || !(self.initial_step_scale > 0.0) {
            return Err(Error::invalid("need adapt_interval >= 1 and initial_step_scale > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Chain {
    pub names: Vec<String>,
    /// Every state of the chain, one row per step, burn-in included.
    pub draws: Vec<Vec<f64>>,
    pub logliks: Vec<f64>,
    pub burn_in: usize,
    pub acceptance_burn_in: f64,
    pub acceptance_sampling: f64,
    /// Proposal covariance in use after burn-in (step scale included).
    pub proposal_cov: Vec<Vec<f64>>,
    pub step_scale: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainSummary {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    pub draws: usize,
    pub acceptance_sampling: f64,
}

impl Chain {
    pub fn sampling_draws(&self) -> &[Vec<f64>] {
        &self.draws[self.burn_in..]
    }

    pub fn summary(&self) -> ChainSummary {
        let draws = self.sampling_draws();
        let (mean, cov) = mean_cov(draws);
        let std = (0..mean.len()).map(|i| cov[(i, i)].sqrt()).collect();
        ChainSummary {
            names: self.names.clone(),
            mean: mean.iter().copied().collect(),
            std,
            cov: (0..cov.nrows()).map(|i| cov.row(i).iter().copied().collect()).collect(),
            draws: draws.len(),
            acceptance_sampling: self.acceptance_sampling,
        }
    }
}

fn mean_cov(draws: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let d = draws.first().map_or(0, |x| x.len());
    let n = draws.len() as f64;
    let mut mean = DVector::zeros(d);
    for x in draws {
        mean += DVector::from_column_slice(x);
    }
    mean /= n.max(1.0);
    let mut cov = DMatrix::zeros(d, d);
    for x in draws {
        let dx = DVector::from_column_slice(x) - &mean;
        cov += &dx * dx.transpose();
    }
    cov /= (n - 1.0).max(1.0);
    (mean, cov)
}

fn initial_cov(init: &ParameterVector, frac: f64) -> DMatrix<f64> {
    let sd: Vec<f64> = init
        .params()
        .iter()
        .map(|p| {
            let w = p.hi - p.lo;
            frac * if w.is_finite() { w } else { p.value.abs().max(1.0) }
        })
        .collect();
    DMatrix::from_diagonal(&DVector::from_iterator(sd.len(), sd.iter().map(|s| s * s)))
}

/// Sample from `exp(log_target)` restricted to the bounds of `init`.
///
/// Proposals are `θ* = θ + s L z` with `L Lᵀ` the proposal covariance. During
/// burn-in the covariance tracks `(2.38²/d)` times the regularised chain
/// covariance and `log s` moves toward the target acceptance rate; both are
/// frozen afterwards.
pub fn rwmh<F: FnMut(&[f64]) -> f64>(mut log_target: F, init: &ParameterVector, config: &MCMCConfig) -> Result<Chain> {
    config.validate()?;
    let d = init.len();
    let bounds = init.bounds();
    let mut current = init.values();
    let mut current_ll = log_target(&current);
    if !current_ll.is_finite() {
        return Err(Error::InitInvalid(format!("log target is {current_ll} at the initial point")));
    }

    let mut rng = rng::stream_rng(config.seed, rng::STREAM_MCMC);
    let mut cov = initial_cov(init, config.initial_step_scale);
    let mut chol = cov.clone().cholesky().ok_or_else(|| Error::NumericalSingularity("initial proposal".into()))?;
    let mut log_scale = 0.0_f64;
    let mut draws = Vec::with_capacity(config.steps);
    let mut logliks = Vec::with_capacity(config.steps);
    let (mut acc_burn, mut acc_sample, mut window_acc) = (0usize, 0usize, 0usize);
    let mut rounds = 0usize;
    let mut z = vec![0.0; d];

    for step in 0..config.steps {
        rng::fill_standard_normal(&mut rng, &mut z);
        let jump = chol.l() * DVector::from_column_slice(&z) * log_scale.exp();
        let proposal: Vec<f64> = current.iter().zip(jump.iter()).map(|(c, j)| c + j).collect();
        let inside = proposal.iter().zip(&bounds).all(|(&v, &(lo, hi))| v >= lo && v <= hi);
        let u: f64 = rng.gen();
        let mut accepted = false;
        if inside {
            let ll = log_target(&proposal);
            if ll.is_finite() && u.ln() < ll - current_ll {
                current = proposal;
                current_ll = ll;
                accepted = true;
            }
        }
        draws.push(current.clone());
        logliks.push(current_ll);

        if step < config.burn_in {
            acc_burn += accepted as usize;
            window_acc += accepted as usize;
            if (step + 1) % config.adapt_interval == 0 {
                rounds += 1;
                let rate = window_acc as f64 / config.adapt_interval as f64;
                window_acc = 0;
                log_scale += (rate - config.target_accept) / (rounds as f64).sqrt();
                if draws.len() > 2 * d {
                    let (_, chain_cov) = mean_cov(&draws);
                    let eps = 1e-10 * (chain_cov.trace() / d as f64).max(1e-300);
                    let candidate = (chain_cov + DMatrix::identity(d, d) * eps) * (2.38 * 2.38 / d as f64);
                    if let Some(c) = linalg::symmetrize(&candidate).cholesky() {
                        if candidate.iter().all(|v| v.is_finite()) && candidate.diagonal().iter().all(|&v| v > 0.0) {
                            cov = candidate;
                            chol = c;
                        }
                    }
                }
            }
        } else {
            acc_sample += accepted as usize;
        }
    }

    let scaled = &cov * (2.0 * log_scale).exp();
    let sampling = config.steps - config.burn_in;
    Ok(Chain {
        names: init.names(),
        draws,
        logliks,
        burn_in: config.burn_in,
        acceptance_burn_in: if config.burn_in > 0 { acc_burn as f64 / config.burn_in as f64 } else { 0.0 },
        acceptance_sampling: acc_sample as f64 / sampling as f64,
        proposal_cov: (0..d).map(|i| scaled.row(i).iter().copied().collect()).collect(),
        step_scale: log_scale.exp(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::params::Parameter;

    fn box_init(d: usize) -> ParameterVector {
        ParameterVector::new(
            (0..d)
                .map(|i| Parameter {
                    name: format!("p{i}"),
                    value: 0.0,
                    lo: -10.0,
                    hi: 10.0,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn constant_target_accepts_everything_inside() {
        // No burn-in, so no adaptation: only the box can reject.
        let cfg = MCMCConfig {
            steps: 2000,
            burn_in: 0,
            ..Default::default()
        };
        let chain = rwmh(|_| 0.0, &box_init(2), &cfg).unwrap();
        assert!(chain.acceptance_sampling > 0.9);
        assert!(chain.draws.iter().flatten().all(|v| v.abs() <= 10.0));
    }

    #[test]
    fn same_seed_same_chain() {
        let cfg = MCMCConfig {
            steps: 300,
            burn_in: 100,
            ..Default::default()
        };
        let target = |x: &[f64]| -0.5 * x.iter().map(|v| v * v).sum::<f64>();
        let a = rwmh(target, &box_init(2), &cfg).unwrap();
        let b = rwmh(target, &box_init(2), &cfg).unwrap();
        assert_eq!(a.draws, b.draws);
    }

    #[test]
    fn rejects_bad_config_and_init() {
        let bad = MCMCConfig {
            steps: 10,
            burn_in: 10,
            ..Default::default()
        };
        assert!(rwmh(|_| 0.0, &box_init(1), &bad).is_err());
        let err = rwmh(|_| f64::NEG_INFINITY, &box_init(1), &MCMCConfig::default());
        assert!(matches!(err, Err(Error::InitInvalid(_))));
    }
}

//! Parameter estimation on top of the simulated reduced-rank likelihood.

mod binding;
mod fit;
mod mcmc;
mod optimize;
mod params;
mod study;
mod whittle;

pub use binding::{
    approx_loglik, approx_loglik_values, EvalStatus, Generator, GeneratorBinding, Instance, LoglikEval, PreparedData,
};
pub use fit::{mle_fit, rwmh_sample, spectral_model, whittle_fit, whittle_objective, MleFit};
pub use mcmc::{rwmh, Chain, ChainSummary, MCMCConfig};
pub use optimize::{nelder_mead, NelderMeadConfig, OptimResult};
pub use params::{Parameter, ParameterVector, Target};
pub use study::{monte_carlo_study, Estimator, ParamSummary, Replication, StudyConfig, StudyTable};
pub use whittle::{whittle_loglik, SpectralModel};

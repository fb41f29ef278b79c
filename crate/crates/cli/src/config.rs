//! Command configuration files. Every file carries `schema = 1`, unknown
//! keys are rejected, and relative paths resolve against the file's directory.

use std::path::{Path, PathBuf};

use dmdfm::dmd::Shrinkage;
use dmdfm::estimation::{Estimator, Generator, GeneratorBinding, Parameter, ParameterVector, Target};
use dmdfm::io;
use dmdfm::rank::RankConfig;
use dmdfm::{Error, Result};
use serde::Deserialize;

pub const SCHEMA: u32 = 1;

/// A parsed config plus what the reports need to know about it.
pub struct Loaded<T> {
    pub config: T,
    pub base: PathBuf,
    pub sha256: String,
}

pub fn load<T: serde::de::DeserializeOwned + HasSchema>(path: &Path) -> Result<Loaded<T>> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        column: 1,
        message: "config is not valid UTF-8".into(),
    })?;
    let config: T = io::parse_toml(&text, path)?;
    if config.schema() != SCHEMA {
        return Err(Error::Config(format!(
            "{}: unsupported schema {}, expected {SCHEMA}",
            path.display(),
            config.schema()
        )));
    }
    Ok(Loaded {
        config,
        base: path.parent().unwrap_or(Path::new(".")).to_path_buf(),
        sha256: format!("{:x}", Sha256::digest(&bytes)),
    })
}

pub trait HasSchema {
    fn schema(&self) -> u32;
}

macro_rules! has_schema {
    ($($t:ty),*) => {
        $(impl HasSchema for $t {
            fn schema(&self) -> u32 {
                self.schema
            }
        })*
    };
}

has_schema!(SimulateConfig, SelectRankConfig, FitConfig, StudyFileConfig, ValidateConfig);

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Source {
    /// State-space model file; the measurement error comes from its `sigma_v`.
    Dfm { model: PathBuf },
    /// Jacobian manifest; measurement error set as a share of total variance.
    Ma {
        jacobians: PathBuf,
        #[serde(default)]
        meas_error_share: f64,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub schema: u32,
    pub seed: u64,
    pub periods: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    pub source: Source,
}

fn default_burn_in() -> usize {
    200
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectRankConfig {
    pub schema: u32,
    pub data: PathBuf,
    pub n_max: usize,
    #[serde(default)]
    pub rank: Option<RankConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GeneratorSource {
    Dfm { model: PathBuf },
    Ma { jacobians: PathBuf, sigma_v: f64 },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BindingConfig {
    pub generator: GeneratorSource,
    /// Simulated snapshot count J.
    pub sim_periods: usize,
    pub rank: usize,
    #[serde(default = "default_burn_in")]
    pub sim_burn_in: usize,
    #[serde(default = "default_true")]
    pub common_random_numbers: bool,
    #[serde(default = "default_true")]
    pub demean: bool,
    #[serde(default)]
    pub shrinkage: Shrinkage,
    #[serde(default)]
    pub spectral_horizon: Option<usize>,
}

fn default_true() -> bool {
    true
}

impl BindingConfig {
    pub fn build(&self, targets: Vec<Target>, seed: u64, base: &Path) -> Result<GeneratorBinding> {
        let generator = match &self.generator {
            GeneratorSource::Dfm { model } => Generator::Dfm(io::load_model(&base.join(model))?),
            GeneratorSource::Ma { jacobians, sigma_v } => {
                let (jacobians, c_ss) = io::load_jacobians(&base.join(jacobians))?;
                Generator::Ma {
                    jacobians,
                    c_ss,
                    sigma_v: *sigma_v,
                }
            }
        };
        let mut binding = GeneratorBinding::new(generator, targets, self.sim_periods, self.rank)?.with_seed(seed);
        binding.sim_burn_in = self.sim_burn_in;
        binding.common_random_numbers = self.common_random_numbers;
        binding.demean = self.demean;
        binding.shrinkage = self.shrinkage;
        if let Some(h) = self.spectral_horizon {
            binding.spectral_horizon = h;
        }
        binding.validate()?;
        Ok(binding)
    }
}

/// One estimated parameter: the generator entry it sets, its box and a value.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamConfig {
    pub target: String,
    #[serde(default)]
    pub name: Option<String>,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

pub fn parameters(list: &[ParamConfig]) -> Result<(Vec<Target>, ParameterVector)> {
    if list.is_empty() {
        return Err(Error::Config("at least one [[parameters]] entry is required".into()));
    }
    let targets = list.iter().map(|p| p.target.parse()).collect::<Result<Vec<Target>>>()?;
    let params = list
        .iter()
        .map(|p| Parameter {
            name: p.name.clone().unwrap_or_else(|| p.target.clone()),
            value: p.value,
            lo: p.lo,
            hi: p.hi,
        })
        .collect();
    Ok((targets, ParameterVector::new(params)?))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub schema: u32,
    pub data: PathBuf,
    pub seed: u64,
    pub binding: BindingConfig,
    /// `value` is the starting point.
    pub parameters: Vec<ParamConfig>,
    pub estimator: Estimator,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyFileConfig {
    pub schema: u32,
    pub seed: u64,
    pub replications: usize,
    pub data_periods: usize,
    #[serde(default = "default_burn_in")]
    pub data_burn_in: usize,
    pub binding: BindingConfig,
    /// `value` is the true parameter, also used as the starting point.
    pub parameters: Vec<ParamConfig>,
    pub estimator: Estimator,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateConfig {
    pub schema: u32,
    pub model: PathBuf,
    pub seed: u64,
    /// Cross-section sizes for the `‖A − KG‖` ladder, using the first M rows
    /// of the model's loadings; defaults to the model's own M.
    #[serde(default)]
    pub m_ladder: Vec<usize>,
    #[serde(default = "default_lags")]
    pub var_lags: usize,
    /// Length of the simulated panel for the residual diagnostics.
    #[serde(default = "default_periods")]
    pub periods: usize,
}

fn default_lags() -> usize {
    5
}

fn default_periods() -> usize {
    1000
}

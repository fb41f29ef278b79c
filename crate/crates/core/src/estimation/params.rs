use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Parameter {
    pub name: String,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Named, box-constrained parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterVector {
    params: Vec<Parameter>,
}

impl ParameterVector {
    pub fn new(params: Vec<Parameter>) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::invalid("parameter vector is empty"));
        }
        let mut seen = BTreeSet::new();
        for p in &params {
            if !seen.insert(p.name.as_str()) {
                return Err(Error::invalid(format!("duplicate parameter name {}", p.name)));
            }
            if p.lo.is_nan() || p.hi.is_nan() || !(p.lo < p.hi) {
                return Err(Error::invalid(format!("parameter {}: need lo < hi, got [{}, {}]", p.name, p.lo, p.hi)));
            }
            if !(p.value.is_finite() && p.value >= p.lo && p.value <= p.hi) {
                return Err(Error::invalid(format!(
                    "parameter {} = {} lies outside [{}, {}]",
                    p.name, p.value, p.lo, p.hi
                )));
            }
        }
        Ok(Self { params })
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.value).collect()
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.params.iter().map(|p| (p.lo, p.hi)).collect()
    }

    pub fn contains(&self, values: &[f64]) -> bool {
        values.len() == self.params.len()
            && self
                .params
                .iter()
                .zip(values)
                .all(|(p, &v)| v >= p.lo && v <= p.hi)
    }

    /// Same names and bounds, new values.
    pub fn with_values(&self, values: &[f64]) -> Result<Self> {
        if values.len() != self.params.len() {
            return Err(Error::dims(format!("{} values for {} parameters", values.len(), self.params.len())));
        }
        let params = self
            .params
            .iter()
            .zip(values)
            .map(|(p, &value)| Parameter { value, ..p.clone() })
            .collect();
        Self::new(params)
    }
}

/// What a parameter sets in the generator.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// One entry of A, C or G.
    Entry { matrix: char, row: usize, col: usize },
    /// Every diagonal entry of A or C.
    Diagonal { matrix: char },
    /// Multiplies the template matrix.
    Scale { matrix: char },
    SigmaV,
    ShockRho(String),
    ShockScale(String),
    InputScale(String),
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unrecognised parameter target {s:?}"));
        let s = s.trim();
        if s == "sigma_v" {
            return Ok(Target::SigmaV);
        }
        if let Some(rest) = s.strip_prefix("shock.") {
            return match rest.rsplit_once('.') {
                Some((name, "rho")) if !name.is_empty() => Ok(Target::ShockRho(name.to_string())),
                Some((name, "scale")) if !name.is_empty() => Ok(Target::ShockScale(name.to_string())),
                _ => Err(bad()),
            };
        }
        if let Some(rest) = s.strip_prefix("input.") {
            return match rest.rsplit_once('.') {
                Some((name, "scale")) if !name.is_empty() => Ok(Target::InputScale(name.to_string())),
                _ => Err(bad()),
            };
        }
        let mut chars = s.chars();
        let matrix = chars.next().ok_or_else(bad)?.to_ascii_uppercase();
        if !matches!(matrix, 'A' | 'C' | 'G') {
            return Err(bad());
        }
        let rest = chars.as_str();
        match rest {
            ".diag" if matrix != 'G' => Ok(Target::Diagonal { matrix }),
            ".scale" => Ok(Target::Scale { matrix }),
            _ => {
                let inner = rest
                    .strip_prefix('[')
                    .and_then(|r| r.strip_suffix(']'))
                    .ok_or_else(bad)?;
                let (r, c) = inner.split_once(',').ok_or_else(bad)?;
                let row = r.trim().parse().map_err(|_| bad())?;
                let col = c.trim().parse().map_err(|_| bad())?;
                Ok(Target::Entry { matrix, row, col })
            }
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Entry { matrix, row, col } => write!(f, "{matrix}[{row},{col}]"),
            Target::Diagonal { matrix } => write!(f, "{matrix}.diag"),
            Target::Scale { matrix } => write!(f, "{matrix}.scale"),
            Target::SigmaV => write!(f, "sigma_v"),
            Target::ShockRho(n) => write!(f, "shock.{n}.rho"),
            Target::ShockScale(n) => write!(f, "shock.{n}.scale"),
            Target::InputScale(n) => write!(f, "input.{n}.scale"),
        }
    }
}

//! File formats: headerless CSV matrices, TOML model files and Jacobian
//! manifests.
//!
//! CSV files hold one matrix row per line, comma-separated, written with 17
//! significant digits so values survive a round trip exactly.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dfm::{PanelData, StateSpaceModel};
use crate::error::{Error, Result};
use crate::ma::{InputIrf, InputJacobian, JacobianSet, ShockSpec};
use crate::rng;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::with_capacity(m.len() * 24);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{:.16e}", m[(i, j)]).expect("writing to a String");
        }
        out.push('\n');
    }
    out
}

/// Parse a headerless numeric CSV. `path` only labels errors. Blank lines are
/// skipped; every other line must have the same number of fields.
pub fn parse_matrix_csv(text: &str, path: &Path) -> Result<DMatrix<f64>> {
    let parse_err = |line: usize, column: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        message,
    };
    // The reader's own line count skips blank lines; byte offsets do not.
    let line_of = |pos: Option<&csv::Position>| {
        pos.map_or(1, |p| {
            let start = (p.byte() as usize).min(text.len());
            let rest = &text[start..];
            let skipped = rest.len() - rest.trim_start_matches(['\r', '\n']).len();
            line_col(text, start + skipped).0
        })
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut values = Vec::new();
    let mut rows = 0;
    let mut cols = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = line_of(e.position());
            let message = match e.kind() {
                csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
                    format!("expected {expected_len} fields, found {len}")
                }
                _ => e.to_string(),
            };
            parse_err(line, 1, message)
        })?;
        let line = line_of(record.position());
        for (k, field) in record.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, k + 1, format!("not a number: {field:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(line, k + 1, format!("non-finite value {field:?}")));
            }
            values.push(v);
        }
        cols = record.len();
        rows += 1;
    }
    if rows == 0 {
        return Err(parse_err(1, 1, "file holds no data".into()));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_matrix_csv(&text, path)
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    write_atomic(path, matrix_to_csv(m).as_bytes())
}

/// Panel with one row per observable and one column per period.
pub fn read_panel_csv(path: &Path) -> Result<PanelData> {
    PanelData::new(read_matrix_csv(path)?)
}

/// Write to a sibling temporary file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    let mut file = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    file.write_all(bytes).map_err(io_err(&tmp))?;
    file.sync_all().map_err(io_err(&tmp))?;
    drop(file);
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Resolve a byte offset into 1-based line and column numbers.
pub fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

/// Deserialize TOML, turning syntax and schema errors into `Error::Parse`
/// with the offending line and column.
pub fn parse_toml<T: serde::de::DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
        Error::Parse {
            path: path.to_path_buf(),
            line,
            column,
            message: e.message().to_string(),
        }
    })
}

pub fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_toml(&text, path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianSource {
    pub seed: u64,
    #[serde(default)]
    pub mean: f64,
    #[serde(default = "one")]
    pub std: f64,
}

fn one() -> f64 {
    1.0
}

/// Where a matrix in a model file comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSource {
    /// Entries listed row-major.
    Inline(Vec<f64>),
    File {
        file: PathBuf,
    },
    Diag {
        diag: Vec<f64>,
    },
    /// I.i.d. normal entries drawn column-major from the seed.
    Gaussian {
        gaussian: GaussianSource,
    },
}

impl MatrixSource {
    /// Build a `rows x cols` matrix; relative file paths resolve against `base`.
    pub fn build(&self, key: &str, rows: usize, cols: usize, base: &Path) -> Result<DMatrix<f64>> {
        let m = match self {
            MatrixSource::Inline(v) => {
                if v.len() != rows * cols {
                    return Err(Error::Config(format!(
                        "{key}: {} entries listed, {rows}x{cols} needs {}",
                        v.len(),
                        rows * cols
                    )));
                }
                DMatrix::from_row_slice(rows, cols, v)
            }
            MatrixSource::File { file } => read_matrix_csv(&base.join(file))?,
            MatrixSource::Diag { diag } => {
                if rows != cols || diag.len() != rows {
                    return Err(Error::Config(format!(
                        "{key}: diagonal of length {} cannot fill {rows}x{cols}",
                        diag.len()
                    )));
                }
                DMatrix::from_diagonal(&DVector::from_column_slice(diag))
            }
            MatrixSource::Gaussian { gaussian } => {
                let mut r = rng::stream_rng(gaussian.seed, rng::STREAM_MATRIX);
                let mut m = DMatrix::zeros(rows, cols);
                rng::fill_standard_normal(&mut r, m.as_mut_slice());
                m.map(|z| gaussian.mean + gaussian.std * z)
            }
        };
        if m.shape() != (rows, cols) {
            return Err(Error::Config(format!("{key}: expected {rows}x{cols}, file holds {}x{}", m.nrows(), m.ncols())));
        }
        Ok(m)
    }
}

/// Model file contents: `N` factors, `M` observables, the three system
/// matrices and the measurement-error std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub sigma_v: f64,
    #[serde(rename = "A")]
    pub a: MatrixSource,
    #[serde(rename = "C")]
    pub c: MatrixSource,
    #[serde(rename = "G")]
    pub g: MatrixSource,
}

impl ModelSpec {
    pub fn build(&self, base: &Path) -> Result<StateSpaceModel> {
        let a = self.a.build("A", self.n, self.n, base)?;
        let c = self.c.build("C", self.n, self.n, base)?;
        let g = self.g.build("G", self.m, self.n, base)?;
        StateSpaceModel::new(a, c, g, self.sigma_v)
    }
}

fn base_dir(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

pub fn load_model(path: &Path) -> Result<StateSpaceModel> {
    let spec: ModelSpec = read_toml(path)?;
    spec.build(base_dir(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeTerm {
    /// Index into the manifest's shock list.
    pub shock: usize,
    /// CSV holding the H x H Jacobian of the input with respect to the shock.
    pub file: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputEntry {
    pub name: String,
    /// CSV holding the M x H Jacobian of the observables.
    pub jc: PathBuf,
    /// CSV holding the H x r impulse responses of the input.
    #[serde(default)]
    pub irf: Option<PathBuf>,
    /// Alternatively, GE Jacobians combined with the shocks' AR(1) paths.
    #[serde(default)]
    pub ge: Vec<GeTerm>,
    #[serde(default = "one")]
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JacobianManifest {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "H")]
    pub h: usize,
    pub r: usize,
    pub shocks: Vec<String>,
    pub rho: Vec<f64>,
    #[serde(default)]
    pub scale: Option<Vec<f64>>,
    /// Steady-state level of the observables; zero when absent.
    #[serde(default)]
    pub c_ss: Option<MatrixSource>,
    pub inputs: Vec<InputEntry>,
}

impl JacobianManifest {
    pub fn build(&self, base: &Path) -> Result<(JacobianSet, Option<DVector<f64>>)> {
        let r = self.r;
        if self.shocks.len() != r || self.rho.len() != r {
            return Err(Error::Config(format!(
                "r = {r} but {} shock names and {} rho values given",
                self.shocks.len(),
                self.rho.len()
            )));
        }
        let scale = self.scale.clone().unwrap_or_else(|| vec![1.0; r]);
        if scale.len() != r {
            return Err(Error::Config(format!("r = {r} but {} shock scales given", scale.len())));
        }
        let shocks = (0..r)
            .map(|x| ShockSpec {
                name: self.shocks[x].clone(),
                rho: self.rho[x],
                scale: scale[x],
            })
            .collect();
        let mut inputs = Vec::with_capacity(self.inputs.len());
        for entry in &self.inputs {
            let jc = read_matrix_csv(&base.join(&entry.jc))?;
            let irf = match (&entry.irf, entry.ge.is_empty()) {
                (Some(file), true) => InputIrf::Direct(read_matrix_csv(&base.join(file))?),
                (None, false) => InputIrf::General(
                    entry
                        .ge
                        .iter()
                        .map(|t| Ok((t.shock, read_matrix_csv(&base.join(&t.file))?)))
                        .collect::<Result<_>>()?,
                ),
                _ => {
                    return Err(Error::Config(format!(
                        "input {}: give exactly one of `irf` or `ge`",
                        entry.name
                    )))
                }
            };
            inputs.push(InputJacobian {
                name: entry.name.clone(),
                jc,
                irf,
                scale: entry.scale,
            });
        }
        let set = JacobianSet {
            horizon: self.h,
            shocks,
            inputs,
        };
        set.validate()?;
        if set.n_obs() != Some(self.m) {
            return Err(Error::Config(format!("M = {} but the Jacobians have {:?} rows", self.m, set.n_obs())));
        }
        let c_ss = match &self.c_ss {
            Some(src) => Some(DVector::from_column_slice(src.build("c_ss", self.m, 1, base)?.as_slice())),
            None => None,
        };
        Ok((set, c_ss))
    }
}

pub fn load_jacobians(path: &Path) -> Result<(JacobianSet, Option<DVector<f64>>)> {
    let manifest: JacobianManifest = read_toml(path)?;
    manifest.build(base_dir(path))
}

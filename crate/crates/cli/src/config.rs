//! Experiment configuration files (TOML).

use ccbo::basis::{BasisError, BoxDomain, MultiIndexBasis};
use ccbo::cbo::CboError;
use ccbo::hjb::HjbError;
use ccbo::objectives::{self, ObjectiveError};
use ccbo::{BasisFamily, CboConfig, HjbConfig, Objective, Truncation};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "CCBO_OUT";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse {path}")]
    Parse { path: String, source: Box<toml::de::Error> },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("invalid hjb section")]
    Hjb(#[from] HjbError),
    #[error("invalid cbo section")]
    Cbo(#[from] CboError),
    #[error("invalid objective")]
    Objective(#[from] ObjectiveError),
    #[error("invalid basis")]
    Basis(#[from] BasisError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveSpec {
    Ackley {
        dim: usize,
    },
    Rastrigin {
        dim: usize,
    },
    DoubleWell {},
    Nonsmooth {},
    /// `xᵀQx`, `q` given row by row.
    Quadratic {
        q: Vec<Vec<f64>>,
    },
}

impl ObjectiveSpec {
    pub fn dim(&self) -> usize {
        match self {
            ObjectiveSpec::Ackley { dim } | ObjectiveSpec::Rastrigin { dim } => *dim,
            ObjectiveSpec::DoubleWell {} | ObjectiveSpec::Nonsmooth {} => 1,
            ObjectiveSpec::Quadratic { q } => q.len(),
        }
    }

    pub fn build(&self) -> Result<Objective, ConfigError> {
        Ok(match self {
            ObjectiveSpec::Ackley { dim } => objectives::ackley(*dim)?,
            ObjectiveSpec::Rastrigin { dim } => objectives::rastrigin(*dim)?,
            ObjectiveSpec::DoubleWell {} => objectives::double_well_1d(),
            ObjectiveSpec::Nonsmooth {} => objectives::nonsmooth_1d(),
            ObjectiveSpec::Quadratic { q } => {
                let d = q.len();
                if let Some(row) = q.iter().find(|r| r.len() != d) {
                    return Err(ObjectiveError::NotSquare { rows: d, cols: row.len() }.into());
                }
                let m = ndarray::Array2::from_shape_fn((d, d), |(i, j)| q[i][j]);
                objectives::quadratic(&m)?
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisSpec {
    pub family: BasisFamily,
    pub truncation: Truncation,
    /// Box `Ω`; length-1 bounds apply to every coordinate.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Default for BasisSpec {
    fn default() -> Self {
        Self {
            family: BasisFamily::Legendre,
            truncation: Truncation::TotalDegree(4),
            lower: vec![-2.0],
            upper: vec![2.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowKind {
    /// `ẋ = −∇f(x)` by central differences.
    Gradient,
    /// `ẋ = u_n(x)` from the value function.
    Feedback,
}

impl FlowKind {
    pub fn name(self) -> &'static str {
        match self {
            FlowKind::Gradient => "gradient",
            FlowKind::Feedback => "feedback",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSpec {
    pub x0: Vec<f64>,
    pub dt: f64,
    pub horizon: f64,
    pub fd_step: f64,
    pub fields: Vec<FlowKind>,
}

impl Default for FlowSpec {
    fn default() -> Self {
        Self {
            x0: vec![-2.0],
            dt: 0.01,
            horizon: 10.0,
            fd_step: 1e-6,
            fields: vec![FlowKind::Gradient, FlowKind::Feedback],
        }
    }
}

fn default_runs() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default = "default_runs")]
    pub n_runs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Precomputed coefficient file; defaults to `value_function.json` in the output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_function: Option<PathBuf>,
    pub objective: ObjectiveSpec,
    #[serde(default)]
    pub basis: BasisSpec,
    #[serde(default)]
    pub hjb: HjbConfig,
    #[serde(default)]
    pub cbo: CboConfig,
    #[serde(default)]
    pub flow: FlowSpec,
}

fn broadcast(v: &[f64], d: usize, what: &str) -> Result<Vec<f64>, ConfigError> {
    match v.len() {
        1 => Ok(vec![v[0]; d]),
        n if n == d => Ok(v.to_vec()),
        n => Err(ConfigError::Invalid(format!("{what} has {n} entries, objective dimension is {d}"))),
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.to_string(), source: Box::new(e) })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment configs always serialize")
    }

    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    /// Checks every section and the cross-section dimensions without running anything expensive.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let d = self.dim();
        if d == 0 {
            return Err(ConfigError::Invalid("objective dimension must be at least 1".into()));
        }
        self.objective.build()?;
        self.domain()?;
        self.hjb.validate()?;
        self.cbo.validate()?;
        self.cbo.init.bounds(d)?;
        if self.n_runs == 0 {
            return Err(ConfigError::Invalid("n_runs must be at least 1".into()));
        }
        broadcast(&self.flow.x0, d, "flow.x0")?;
        if !(self.flow.dt > 0.0 && self.flow.horizon > 0.0 && self.flow.fd_step > 0.0) {
            return Err(ConfigError::Invalid("flow dt, horizon and fd_step must be positive".into()));
        }
        if self.flow.fields.is_empty() {
            return Err(ConfigError::Invalid("flow.fields is empty".into()));
        }
        Ok(())
    }

    pub fn domain(&self) -> Result<BoxDomain<f64>, ConfigError> {
        let d = self.dim();
        let lo = broadcast(&self.basis.lower, d, "basis.lower")?;
        let hi = broadcast(&self.basis.upper, d, "basis.upper")?;
        Ok(BoxDomain::new(lo, hi)?)
    }

    pub fn build_basis(&self) -> Result<MultiIndexBasis<f64>, ConfigError> {
        Ok(MultiIndexBasis::new(self.basis.family, self.domain()?, self.basis.truncation)?)
    }

    pub fn flow_start(&self) -> Vec<f64> {
        broadcast(&self.flow.x0, self.dim(), "flow.x0").expect("validated")
    }

    /// SHA-256 of the canonical JSON form, ignoring where outputs are written.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out_dir = None;
        let json = serde_json::to_string(&canonical).expect("experiment configs always serialize");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn label(&self, config_path: &Path) -> String {
        self.name.clone().unwrap_or_else(|| {
            config_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "experiment".into())
        })
    }
}

/// `--out`, then the config's `out_dir`, then `$CCBO_OUT/<label>`, then `out/<label>`.
pub fn resolve_out_dir(
    cli_out: Option<&Path>,
    cfg: &ExperimentConfig,
    config_path: &Path,
    env_root: Option<&str>,
) -> PathBuf {
    if let Some(p) = cli_out {
        return p.to_path_buf();
    }
    if let Some(p) = &cfg.out_dir {
        return p.clone();
    }
    let root = env_root.filter(|s| !s.is_empty()).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out"));
    root.join(cfg.label(config_path))
}

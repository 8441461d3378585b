//! Run configuration: command-line flags layered over an optional TOML file.
//!
//! Precedence is flag, then file, then built-in default, per setting. Settings
//! that contradict each other after layering are errors.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{Approximation, DEFAULT_QUADRATURE_NODES};
use crate::optimize::{BoundaryThresholds, Method};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intercept {
    /// No intercept column is added.
    #[default]
    None,
    /// Ones prepended to the fixed and random designs.
    Both,
    /// Ones prepended to the fixed design only.
    Fixed,
}

impl Intercept {
    pub fn as_str(self) -> &'static str {
        match self {
            Intercept::None => "none",
            Intercept::Both => "both",
            Intercept::Fixed => "fixed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApproxKind {
    Agq,
    Laplace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Ml,
    Mspl,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Ml => Method::Ml,
            MethodArg::Mspl => Method::Mspl,
        }
    }
}

/// Flags shared by `fit` and `simulate`.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// TOML file supplying defaults for any flag.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Binary response column.
    #[arg(long)]
    pub response: Option<String>,
    /// Fixed-effect columns, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub fixed: Option<Vec<String>>,
    /// Random-effect columns, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub random: Option<Vec<String>>,
    /// Cluster label column.
    #[arg(long)]
    pub cluster: Option<String>,
    /// Prepend a ones column; bare `--intercept` means `both`.
    #[arg(long, num_args = 0..=1, default_missing_value = "both")]
    pub intercept: Option<Intercept>,
    #[arg(long)]
    pub method: Option<MethodArg>,
    /// agq (q = 1 only) or laplace; default agq for q = 1, laplace otherwise.
    #[arg(long)]
    pub approx: Option<ApproxKind>,
    /// Quadrature nodes for agq.
    #[arg(long)]
    pub quadrature: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replications: Option<usize>,
    /// Result file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub beta_max: Option<f64>,
    #[arg(long)]
    pub psi_max: Option<f64>,
    #[arg(long)]
    pub se_max: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<PathBuf>,
    pub response: Option<String>,
    pub fixed: Option<Vec<String>>,
    pub random: Option<Vec<String>>,
    pub cluster: Option<String>,
    pub intercept: Option<Intercept>,
    pub method: Option<MethodArg>,
    pub approx: Option<ApproxKind>,
    pub quadrature: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub thresholds: FileThresholds,
    #[serde(default)]
    pub simulation: FileSimulation,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileThresholds {
    pub beta_max: Option<f64>,
    pub psi_max: Option<f64>,
    pub se_max: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSimulation {
    pub replications: Option<usize>,
    /// Explicit truth `(β, ψ)`; otherwise the MSPL fit to the data is used.
    pub theta_true: Option<Vec<f64>>,
    /// Methods compared in the study.
    pub methods: Option<Vec<MethodArg>>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Argument(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: FileConfig =
            toml::from_str(&text).map_err(|e| Error::Argument(format!("config {}: {e}", path.display())))?;
        // Relative data paths are taken relative to the config file.
        if let (Some(data), Some(dir)) = (&config.data, path.parent()) {
            if data.is_relative() {
                config.data = Some(dir.join(data));
            }
        }
        Ok(config)
    }
}

/// Columns and intercept handling for [`super::load_csv`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataSpec {
    pub response: String,
    pub fixed: Vec<String>,
    pub random: Vec<String>,
    pub cluster: String,
    pub intercept: Intercept,
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data_path: PathBuf,
    pub spec: DataSpec,
    pub method: Method,
    pub approx: Option<ApproxKind>,
    pub quadrature: Option<usize>,
    pub seed: u64,
    pub replications: usize,
    pub theta_true: Option<Vec<f64>>,
    pub simulation_methods: Vec<Method>,
    pub out: Option<PathBuf>,
    pub thresholds: BoundaryThresholds<f64>,
}

pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_REPLICATIONS: usize = 500;

impl RunConfig {
    pub fn resolve(args: &RunArgs) -> Result<Self> {
        let file = match &args.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let required = |flag: &Option<String>, from_file: &Option<String>, name: &str| {
            flag.clone()
                .or_else(|| from_file.clone())
                .ok_or_else(|| Error::Argument(format!("--{name} is required (flag or config file)")))
        };
        let data_path = args
            .data
            .clone()
            .or(file.data.clone())
            .ok_or_else(|| Error::Argument("--data is required (flag or config file)".into()))?;
        let spec = DataSpec {
            response: required(&args.response, &file.response, "response")?,
            fixed: args.fixed.clone().or(file.fixed.clone()).unwrap_or_default(),
            random: args.random.clone().or(file.random.clone()).unwrap_or_default(),
            cluster: required(&args.cluster, &file.cluster, "cluster")?,
            intercept: args.intercept.or(file.intercept).unwrap_or_default(),
        };
        let defaults = BoundaryThresholds::<f64>::default();
        let thresholds = BoundaryThresholds {
            beta_max: args.beta_max.or(file.thresholds.beta_max).unwrap_or(defaults.beta_max),
            psi_max: args.psi_max.or(file.thresholds.psi_max).unwrap_or(defaults.psi_max),
            se_max: args.se_max.or(file.thresholds.se_max).unwrap_or(defaults.se_max),
        };
        for (name, v) in [("beta-max", thresholds.beta_max), ("psi-max", thresholds.psi_max), ("se-max", thresholds.se_max)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Argument(format!("--{name} must be positive, got {v}")));
            }
        }
        let approx = args.approx.or(file.approx);
        let quadrature = args.quadrature.or(file.quadrature);
        if approx == Some(ApproxKind::Laplace) && quadrature.is_some() {
            return Err(Error::Argument("--quadrature conflicts with --approx laplace".into()));
        }
        if quadrature == Some(0) {
            return Err(Error::Argument("--quadrature must be at least 1".into()));
        }
        let replications = args.replications.or(file.simulation.replications).unwrap_or(DEFAULT_REPLICATIONS);
        if replications == 0 {
            return Err(Error::Argument("--replications must be at least 1".into()));
        }
        let simulation_methods = match (args.method, &file.simulation.methods) {
            (Some(m), _) => vec![m.into()],
            (None, Some(list)) if !list.is_empty() => list.iter().map(|&m| m.into()).collect(),
            (None, Some(_)) => return Err(Error::Argument("simulation.methods is empty".into())),
            (None, None) => vec![Method::Mspl, Method::Ml],
        };
        Ok(Self {
            data_path,
            spec,
            method: args.method.or(file.method).map_or(Method::Mspl, Method::from),
            approx,
            quadrature,
            seed: args.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
            replications,
            theta_true: file.simulation.theta_true.clone(),
            simulation_methods,
            out: args.out.clone().or(file.out.clone()),
            thresholds,
        })
    }

    /// Integral approximation for a dataset with `q` random effects.
    pub fn approximation(&self, q: usize) -> Result<Approximation> {
        match (self.approx, q) {
            (Some(ApproxKind::Laplace), _) => Ok(Approximation::Laplace),
            (Some(ApproxKind::Agq), q) if q != 1 => Err(Error::Argument(format!(
                "--approx agq needs a single random effect, the model has q = {q}"
            ))),
            (None, q) if q != 1 => match self.quadrature {
                Some(_) => Err(Error::Argument(format!("--quadrature needs q = 1, the model has q = {q}"))),
                None => Ok(Approximation::Laplace),
            },
            _ => Ok(Approximation::Agq(self.quadrature.unwrap_or(DEFAULT_QUADRATURE_NODES))),
        }
    }
}

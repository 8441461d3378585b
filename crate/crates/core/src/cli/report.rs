//! Result documents (TOML). Floats are written in shortest round-trip form,
//! so re-parsing yields bit-identical values.

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::inference::WaldSummary;
use crate::optimize::FitResult;
use crate::sim::SimulationSummary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub command: String,
    pub data: String,
    pub response: String,
    pub fixed: Vec<String>,
    pub random: Vec<String>,
    pub cluster: String,
    pub intercept: String,
    pub method: String,
    pub approximation: String,
    pub beta_max: f64,
    pub psi_max: f64,
    pub se_max: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replications: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub methods: Option<Vec<String>>,
}

impl ConfigEcho {
    pub fn new(command: &str, cfg: &RunConfig, approximation: String) -> Self {
        Self {
            command: command.into(),
            data: cfg.data_path.display().to_string(),
            response: cfg.spec.response.clone(),
            fixed: cfg.spec.fixed.clone(),
            random: cfg.spec.random.clone(),
            cluster: cfg.spec.cluster.clone(),
            intercept: cfg.spec.intercept.as_str().into(),
            method: cfg.method.to_string(),
            approximation,
            beta_max: cfg.thresholds.beta_max,
            psi_max: cfg.thresholds.psi_max,
            se_max: cfg.thresholds.se_max,
            seed: None,
            replications: None,
            methods: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterReport {
    pub name: String,
    pub estimate: f64,
    /// Absent when unavailable.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub se: Option<f64>,
    pub se_available: bool,
    pub boundary: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub method: String,
    pub approximation: String,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    pub stop_reason: String,
    pub restarted: bool,
    pub loglik: f64,
    pub penalized_objective: f64,
    pub boundary_flagged: bool,
    pub se_flagged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub condition_number: Option<f64>,
    pub names: Vec<String>,
    pub estimates: Vec<f64>,
    pub parameters: Vec<ParameterReport>,
}

impl FitReport {
    pub fn new(result: &FitResult<f64>, names: Vec<String>) -> Self {
        let estimates = result.theta_hat.to_vector().as_slice().to_vec();
        let flags = result.boundary_flags.all();
        let se: Vec<Option<f64>> = match &result.se {
            Some(WaldSummary { se, .. }) => se.clone(),
            None => vec![None; estimates.len()],
        };
        let parameters = names
            .iter()
            .zip(&estimates)
            .zip(se.iter().zip(&flags))
            .map(|((name, &estimate), (&se, &boundary))| ParameterReport {
                name: name.clone(),
                estimate,
                se,
                se_available: se.is_some(),
                boundary,
            })
            .collect();
        Self {
            method: result.method.to_string(),
            approximation: result.approximation.to_string(),
            converged: result.converged,
            iterations: result.iterations,
            grad_norm: result.grad_norm,
            stop_reason: format!("{:?}", result.stop_reason).to_lowercase(),
            restarted: result.restarted,
            loglik: result.loglik_at_hat,
            penalized_objective: result.penalized_value,
            boundary_flagged: result.is_flagged(),
            se_flagged: result.se_flagged(&se),
            condition_number: result.se.as_ref().map(|s| s.condition_number),
            names,
            estimates,
            parameters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDocument {
    pub config: ConfigEcho,
    pub fit: FitReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthReport {
    /// `config` or `mspl-fit`.
    pub source: String,
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummaryReport {
    pub name: String,
    pub truth: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bias: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage: Option<f64>,
    /// Centered-estimate percentiles at `summary.probabilities`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub percentiles: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummaryReport {
    pub label: String,
    pub retained: usize,
    pub failed: usize,
    pub not_converged: usize,
    pub flagged: usize,
    pub parameters: Vec<ParameterSummaryReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub replications: usize,
    pub seed: u64,
    pub coverage_level: f64,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationDocument {
    pub config: ConfigEcho,
    pub truth: TruthReport,
    pub summary: StudyReport,
    pub methods: Vec<MethodSummaryReport>,
}

impl SimulationDocument {
    pub fn new(config: ConfigEcho, truth: TruthReport, summary: &SimulationSummary) -> Self {
        let methods = summary
            .methods
            .iter()
            .map(|m| MethodSummaryReport {
                label: m.label.clone(),
                retained: m.retained,
                failed: m.failed,
                not_converged: m.not_converged,
                flagged: m.flagged,
                parameters: m
                    .parameters
                    .iter()
                    .map(|p| ParameterSummaryReport {
                        name: p.name.clone(),
                        truth: p.truth,
                        mean: p.mean,
                        bias: p.bias,
                        variance: p.variance,
                        mse: p.mse,
                        pu: p.pu,
                        coverage: p.coverage,
                        percentiles: p.percentiles.clone(),
                    })
                    .collect(),
            })
            .collect();
        Self {
            config,
            truth,
            summary: StudyReport {
                replications: summary.replications,
                seed: summary.seed,
                coverage_level: crate::sim::COVERAGE_LEVEL,
                probabilities: summary.probabilities.clone(),
            },
            methods,
        }
    }
}

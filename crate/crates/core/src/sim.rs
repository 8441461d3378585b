//! Monte Carlo replication studies.
//!
//! Each replication draws its responses from its own ChaCha20 stream
//! (`seed`, stream = replication index), so results do not depend on the
//! order or the thread on which replications run.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inference::{wald_ci, wald_se};
use crate::model::{logistic, ClusteredDataset, Theta};
use crate::optimize::{fit, FitOptions};

/// Probabilities used by [`percentile_table`] unless told otherwise.
pub const DEFAULT_PERCENTILES: [f64; 7] = [0.05, 0.10, 0.25, 0.50, 0.75, 0.90, 0.95];

/// Nominal level of the Wald intervals used for coverage.
pub const COVERAGE_LEVEL: f64 = 0.95;

#[derive(Debug, Clone)]
pub struct SimulationDesign {
    pub template: ClusteredDataset<f64>,
    pub theta_true: Theta<f64>,
    pub replications: usize,
    pub seed: u64,
    pub methods: Vec<FitOptions<f64>>,
}

impl SimulationDesign {
    pub fn new(
        template: ClusteredDataset<f64>,
        theta_true: Theta<f64>,
        replications: usize,
        seed: u64,
        methods: Vec<FitOptions<f64>>,
    ) -> Result<Self> {
        let design = Self { template, theta_true, replications, seed, methods };
        design.validate()?;
        Ok(design)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Argument("replications must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Argument("at least one method is required".into()));
        }
        if self.theta_true.p() != self.template.p() || self.theta_true.q() != self.template.q() {
            return Err(Error::Dimension("true theta does not match the template design".into()));
        }
        if self.theta_true.to_vector().iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("true theta must be finite".into()));
        }
        for m in &self.methods {
            m.validate()?;
        }
        Ok(())
    }
}

/// Generator for replication `index` of a study seeded with `seed`.
pub fn replication_rng(seed: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draw `u_i = L z_i` per cluster and Bernoulli responses given `u_i`; the
/// template's responses are ignored.
pub fn simulate_responses<R: Rng + ?Sized>(
    template: &ClusteredDataset<f64>,
    theta: &Theta<f64>,
    rng: &mut R,
) -> Result<ClusteredDataset<f64>> {
    if theta.p() != template.p() || theta.q() != template.q() {
        return Err(Error::Dimension("theta does not match the template design".into()));
    }
    let lower = theta.lower_cholesky();
    let responses = template
        .clusters()
        .iter()
        .map(|cluster| {
            let z = DVector::from_fn(template.q(), |_, _| rng.sample::<f64, _>(StandardNormal));
            let u = &lower * z;
            let eta = cluster.x() * theta.beta() + cluster.z() * u;
            eta.iter().map(|&e| u8::from(rng.random::<f64>() < logistic(e))).collect()
        })
        .collect();
    template.with_responses(responses)
}

/// What happened to one method on one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutcome {
    pub estimate: Option<Vec<f64>>,
    pub se: Option<Vec<Option<f64>>>,
    pub converged: bool,
    pub flagged: bool,
    /// Kept for the summary statistics.
    pub retained: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub index: usize,
    pub outcomes: Vec<MethodOutcome>,
}

fn fit_one(data: &ClusteredDataset<f64>, options: &FitOptions<f64>) -> MethodOutcome {
    let failed = |e: Error| MethodOutcome {
        estimate: None,
        se: None,
        converged: false,
        flagged: false,
        retained: false,
        error: Some(e.to_string()),
    };
    let result = match fit(data, options) {
        Ok(r) => r,
        Err(e) => return failed(e),
    };
    let estimate = Some(result.theta_hat.to_vector().as_slice().to_vec());
    let flagged = result.is_flagged();
    let se = if result.converged {
        match wald_se(data, &result) {
            Ok(s) => Some(s.se),
            Err(e) => {
                return MethodOutcome { estimate, se: None, converged: true, flagged, retained: false, error: Some(e.to_string()) }
            }
        }
    } else {
        None
    };
    let se_ok = se.as_ref().is_some_and(|s| !result.se_flagged(s));
    MethodOutcome {
        estimate,
        se,
        converged: result.converged,
        flagged,
        retained: result.converged && !flagged && se_ok,
        error: None,
    }
}

/// Simulate and fit one replication with every method.
pub fn run_replication(design: &SimulationDesign, index: usize) -> ReplicationRecord {
    let mut rng = replication_rng(design.seed, index as u64);
    match simulate_responses(&design.template, &design.theta_true, &mut rng) {
        Ok(data) => ReplicationRecord { index, outcomes: design.methods.iter().map(|m| fit_one(&data, m)).collect() },
        Err(e) => ReplicationRecord {
            index,
            outcomes: design
                .methods
                .iter()
                .map(|_| MethodOutcome {
                    estimate: None,
                    se: None,
                    converged: false,
                    flagged: false,
                    retained: false,
                    error: Some(e.to_string()),
                })
                .collect(),
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSummary {
    pub name: String,
    pub truth: f64,
    /// The statistics are `None` when nothing was retained.
    pub mean: Option<f64>,
    pub bias: Option<f64>,
    pub variance: Option<f64>,
    pub mse: Option<f64>,
    pub pu: Option<f64>,
    pub coverage: Option<f64>,
    /// Centered-estimate quantiles at [`SimulationSummary::probabilities`].
    pub percentiles: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub label: String,
    pub retained: usize,
    pub failed: usize,
    pub not_converged: usize,
    pub flagged: usize,
    pub parameters: Vec<ParameterSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSummary {
    pub replications: usize,
    pub seed: u64,
    pub probabilities: Vec<f64>,
    pub methods: Vec<MethodSummary>,
}

/// Type-7 (linear interpolation) empirical quantiles; `None` for an empty
/// sample.
pub fn percentile_table(centered: &[f64], probs: &[f64]) -> Option<Vec<f64>> {
    if centered.is_empty() {
        return None;
    }
    let mut sorted = centered.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Some(
        probs
            .iter()
            .map(|&p| {
                let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
                let lo = h.floor() as usize;
                let hi = (lo + 1).min(n - 1);
                sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
            })
            .collect(),
    )
}

fn method_label(options: &FitOptions<f64>) -> String {
    format!("{}-{}", options.method, options.approx)
}

/// Reduce replication records, in index order, into summary statistics.
pub fn summarize(design: &SimulationDesign, records: &[ReplicationRecord]) -> SimulationSummary {
    let mut records: Vec<&ReplicationRecord> = records.iter().collect();
    records.sort_by_key(|r| r.index);
    let truth = design.theta_true.to_vector();
    let names = design.theta_true.parameter_names(design.template.fixed_names());
    let methods = design
        .methods
        .iter()
        .enumerate()
        .map(|(m, options)| {
            let outcomes: Vec<&MethodOutcome> = records.iter().map(|r| &r.outcomes[m]).collect();
            let kept: Vec<&MethodOutcome> = outcomes.iter().copied().filter(|o| o.retained).collect();
            let parameters = names
                .iter()
                .enumerate()
                .map(|(j, name)| {
                    let t = truth[j];
                    let estimates: Vec<f64> = kept.iter().map(|o| o.estimate.as_ref().expect("retained")[j]).collect();
                    let centered: Vec<f64> = estimates.iter().map(|e| e - t).collect();
                    let r = estimates.len() as f64;
                    let stats = (!estimates.is_empty()).then(|| {
                        let mean = estimates.iter().sum::<f64>() / r;
                        let variance = estimates.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / r;
                        let mse = centered.iter().map(|c| c * c).sum::<f64>() / r;
                        let pu = estimates.iter().filter(|&&e| e < t).count() as f64 / r;
                        let covered = kept
                            .iter()
                            .filter(|o| {
                                let est = o.estimate.as_ref().expect("retained")[j];
                                let se = o.se.as_ref().and_then(|s| s[j]).expect("retained");
                                wald_ci(est, se, COVERAGE_LEVEL).is_ok_and(|ci| ci.contains(t))
                            })
                            .count();
                        (mean, variance, mse, pu, covered as f64 / r)
                    });
                    ParameterSummary {
                        name: name.clone(),
                        truth: t,
                        mean: stats.map(|s| s.0),
                        bias: stats.map(|s| s.0 - t),
                        variance: stats.map(|s| s.1),
                        mse: stats.map(|s| s.2),
                        pu: stats.map(|s| s.3),
                        coverage: stats.map(|s| s.4),
                        percentiles: percentile_table(&centered, &DEFAULT_PERCENTILES),
                    }
                })
                .collect();
            MethodSummary {
                label: method_label(options),
                retained: kept.len(),
                failed: outcomes.iter().filter(|o| o.error.is_some() && o.estimate.is_none()).count(),
                not_converged: outcomes.iter().filter(|o| o.estimate.is_some() && !o.converged).count(),
                flagged: outcomes.iter().filter(|o| o.flagged).count(),
                parameters,
            }
        })
        .collect();
    SimulationSummary {
        replications: design.replications,
        seed: design.seed,
        probabilities: DEFAULT_PERCENTILES.to_vec(),
        methods,
    }
}

/// Run every replication (in parallel) and summarize.
pub fn run_study(design: &SimulationDesign) -> Result<SimulationSummary> {
    Ok(summarize(design, &run_records(design)?))
}

/// Replication records in index order.
pub fn run_records(design: &SimulationDesign) -> Result<Vec<ReplicationRecord>> {
    design.validate()?;
    Ok((0..design.replications).into_par_iter().map(|i| run_replication(design, i)).collect())
}

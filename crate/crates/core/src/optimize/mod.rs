//! Maximization of the (penalized) approximate log-likelihood.

mod bfgs;
mod gradient;

use std::fmt;

use nalgebra::{DMatrix, DVector};

pub use bfgs::StopReason;
pub use gradient::{default_step_scale, numeric_gradient};

use crate::error::{Error, Result};
use crate::inference::WaldSummary;
use crate::likelihood::{ApproxLikelihood, Approximation, MAX_NODES};
use crate::model::{bernoulli_loglik, logistic, ClusteredDataset, Theta};
use crate::penalties::{composite_penalty, jeffreys_penalty, scale_factor};
use crate::scalar::{lit, Real};
use bfgs::{bfgs, nelder_mead, Problem};

/// Newton steps used for the default starting β.
const START_NEWTON_STEPS: usize = 25;
/// Function evaluations allowed to the Nelder–Mead polish, per parameter.
const POLISH_EVALS_PER_PARAMETER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Ml,
    Mspl,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Ml => "ml",
            Method::Mspl => "mspl",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ml" => Ok(Method::Ml),
            "mspl" => Ok(Method::Mspl),
            other => Err(Error::Argument(format!("unknown method '{other}' (expected ml or mspl)"))),
        }
    }
}

/// Limits beyond which an estimate is treated as lying on the boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryThresholds<T: Real> {
    pub beta_max: T,
    pub psi_max: T,
    pub se_max: T,
}

impl<T: Real> Default for BoundaryThresholds<T> {
    fn default() -> Self {
        Self { beta_max: lit(15.0), psi_max: lit(10.0), se_max: lit(50.0) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions<T: Real> {
    pub method: Method,
    pub approx: Approximation,
    pub start: Option<Theta<T>>,
    pub grad_tol: T,
    pub max_iter: usize,
    pub fd_step_scale: T,
    pub thresholds: BoundaryThresholds<T>,
}

impl<T: Real> FitOptions<T> {
    pub fn new(method: Method, approx: Approximation) -> Self {
        Self {
            method,
            approx,
            start: None,
            grad_tol: lit(1e-6),
            max_iter: 500,
            fd_step_scale: default_step_scale(),
            thresholds: BoundaryThresholds::default(),
        }
    }

    /// Options with the default approximation for the dataset's q.
    pub fn for_data(data: &ClusteredDataset<T>, method: Method) -> Self {
        Self::new(method, Approximation::default_for(data.q()))
    }

    pub fn with_start(mut self, start: Theta<T>) -> Self {
        self.start = Some(start);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let Approximation::Agq(nodes) = self.approx {
            if nodes == 0 || nodes > MAX_NODES {
                return Err(Error::Argument(format!("quadrature nodes must be in 1..={MAX_NODES}, got {nodes}")));
            }
        }
        let positive = |name: &str, v: T| {
            if v > T::zero() && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Argument(format!("{name} must be positive, got {v}")))
            }
        };
        positive("grad_tol", self.grad_tol)?;
        positive("fd_step_scale", self.fd_step_scale)?;
        positive("beta_max", self.thresholds.beta_max)?;
        positive("psi_max", self.thresholds.psi_max)?;
        positive("se_max", self.thresholds.se_max)?;
        if self.max_iter == 0 {
            return Err(Error::Argument("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-parameter boundary flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryFlags {
    pub beta: Vec<bool>,
    pub psi: Vec<bool>,
}

impl BoundaryFlags {
    pub fn any(&self) -> bool {
        self.beta.iter().chain(&self.psi).any(|&f| f)
    }

    pub fn all(&self) -> Vec<bool> {
        self.beta.iter().chain(&self.psi).copied().collect()
    }
}

pub fn boundary_flags<T: Real>(theta: &Theta<T>, thresholds: &BoundaryThresholds<T>) -> BoundaryFlags {
    BoundaryFlags {
        beta: theta.beta().iter().map(|b| !(b.abs() <= thresholds.beta_max)).collect(),
        psi: theta.psi().iter().map(|s| !(s.abs() <= thresholds.psi_max)).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult<T: Real> {
    pub theta_hat: Theta<T>,
    /// Unpenalized approximate log-likelihood at `theta_hat`.
    pub loglik_at_hat: T,
    /// Maximized objective (equal to `loglik_at_hat` for ML).
    pub penalized_value: T,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: T,
    pub boundary_flags: BoundaryFlags,
    pub se: Option<WaldSummary<T>>,
    pub method: Method,
    pub approximation: Approximation,
    pub stop_reason: StopReason,
    pub thresholds: BoundaryThresholds<T>,
    /// Whether the Nelder–Mead polish and BFGS restart were used.
    pub restarted: bool,
    /// Objective at each accepted iterate.
    pub objective_trace: Vec<T>,
}

impl<T: Real> FitResult<T> {
    pub fn is_flagged(&self) -> bool {
        self.boundary_flags.any()
    }

    /// True when a standard error is unavailable or exceeds `se_max`.
    pub fn se_flagged(&self, se: &[Option<T>]) -> bool {
        se.iter().any(|s| s.is_none_or(|v| v > self.thresholds.se_max))
    }
}

/// `ℓ(θ)` for ML, `ℓ(θ)` plus the composite penalty for MSPL.
pub fn objective<T: Real>(data: &ClusteredDataset<T>, theta: &Theta<T>, options: &FitOptions<T>) -> Result<T> {
    let lik = ApproxLikelihood::new(data, options.approx)?;
    Objective::new(lik, options.method, options.fd_step_scale).value_at(theta)
}

struct Objective<'a, T: Real> {
    lik: ApproxLikelihood<'a, T>,
    method: Method,
    step_scale: T,
}

impl<'a, T: Real> Objective<'a, T> {
    fn new(lik: ApproxLikelihood<'a, T>, method: Method, step_scale: T) -> Self {
        Self { lik, method, step_scale }
    }

    fn theta(&self, x: &DVector<T>) -> Result<Theta<T>> {
        Theta::from_slice(x.as_slice(), self.lik.data().p())
    }

    fn value_at(&self, theta: &Theta<T>) -> Result<T> {
        let ll = self.lik.loglik(theta)?;
        let value = match self.method {
            Method::Ml => ll,
            Method::Mspl => ll + composite_penalty(self.lik.data(), theta)?.value,
        };
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::Fit(format!("objective is not finite at {:?}", theta.to_vector().as_slice())))
        }
    }

    fn gradient_at(&self, x: &DVector<T>) -> Result<DVector<T>> {
        let mut grad = numeric_gradient(|v| self.lik.loglik(&self.theta(v)?), x, self.step_scale)?;
        if self.method == Method::Mspl {
            grad += composite_penalty(self.lik.data(), &self.theta(x)?)?.gradient;
        }
        Ok(grad)
    }
}

/// Adapter minimizing `−objective`; failed evaluations are reported as `None`.
struct Negated<'o, 'a, T: Real> {
    objective: &'o Objective<'a, T>,
    last_error: Option<Error>,
}

impl<T: Real> Problem<T> for Negated<'_, '_, T> {
    fn value(&mut self, x: &DVector<T>) -> Option<T> {
        match self.objective.theta(x).and_then(|t| self.objective.value_at(&t)) {
            Ok(v) => Some(-v),
            Err(e) => {
                self.last_error = Some(e);
                None
            }
        }
    }

    fn gradient(&mut self, x: &DVector<T>) -> Option<DVector<T>> {
        match self.objective.gradient_at(x) {
            Ok(g) => Some(-g),
            Err(e) => {
                self.last_error = Some(e);
                None
            }
        }
    }
}

/// Default start: β from a few Newton steps on the fixed-effects-only logistic
/// likelihood plus `c·½ log det(XᵀWX)`, and ψ = 0.
pub fn default_start<T: Real>(data: &ClusteredDataset<T>) -> Result<Theta<T>> {
    let x = data.stacked_x();
    let y = data.stacked_y();
    let c: T = scale_factor(data.p(), data.n())?;
    let penalized = |beta: &DVector<T>| -> Option<T> {
        let eta = x * beta;
        let ll = y.iter().zip(eta.iter()).fold(T::zero(), |a, (&yt, &e)| a + bernoulli_loglik(yt, e));
        let pen = jeffreys_penalty(x, beta).ok()?.value;
        let v = ll + c * pen;
        v.is_finite().then_some(v)
    };

    let mut beta = DVector::zeros(data.p());
    let mut current = penalized(&beta).ok_or(Error::SingularInformation)?;
    for _ in 0..START_NEWTON_STEPS {
        let eta = x * &beta;
        let mut score = DVector::zeros(data.p());
        let mut info = DMatrix::zeros(data.p(), data.p());
        for t in 0..x.nrows() {
            let mu = logistic(eta[t]);
            let w = mu * (T::one() - mu);
            let row = x.row(t).transpose();
            score += &row * (lit::<T>(f64::from(y[t])) - mu);
            info += &row * row.transpose() * w;
        }
        score += jeffreys_penalty(x, &beta)?.gradient * c;
        if score.norm() <= lit(1e-10) {
            break;
        }
        let Some(step) = info.cholesky().map(|ch| ch.solve(&score)) else { break };
        let mut scale = T::one();
        let mut moved = false;
        for _ in 0..30 {
            let candidate = &beta + &step * scale;
            if let Some(v) = penalized(&candidate) {
                if v >= current {
                    beta = candidate;
                    current = v;
                    moved = true;
                    break;
                }
            }
            scale *= lit(0.5);
        }
        if !moved {
            break;
        }
    }
    Theta::new(beta, DVector::zeros(crate::model::psi_len(data.q())))
}

/// Maximize the ML or MSPL objective.
///
/// Non-convergence is reported through `converged = false`; errors are
/// returned only for invalid input or when the objective cannot be evaluated
/// at the starting point.
pub fn fit<T: Real>(data: &ClusteredDataset<T>, options: &FitOptions<T>) -> Result<FitResult<T>> {
    options.validate()?;
    let start = match &options.start {
        Some(s) => {
            if s.p() != data.p() || s.q() != data.q() {
                return Err(Error::Dimension(format!(
                    "start has p = {}, q = {} but data has p = {}, q = {}",
                    s.p(),
                    s.q(),
                    data.p(),
                    data.q()
                )));
            }
            if s.to_vector().iter().any(|v| !v.is_finite()) {
                return Err(Error::Argument("start values must be finite".into()));
            }
            s.clone()
        }
        None => default_start(data)?,
    };

    let lik = ApproxLikelihood::new(data, options.approx)?;
    let objective = Objective::new(lik, options.method, options.fd_step_scale);
    let x0 = start.to_vector();
    let f0 = objective.value_at(&start).map_err(|e| Error::Fit(format!("objective at start: {e}")))?;
    let g0 = objective
        .gradient_at(&x0)
        .map_err(|e| Error::Fit(format!("gradient at start: {e}")))?;

    let mut problem = Negated { objective: &objective, last_error: None };
    let mut outcome = bfgs(&mut problem, x0, -f0, -g0, options.grad_tol, options.max_iter);
    let mut restarted = false;
    let mut trace: Vec<T> = outcome.trace.iter().map(|&v| -v).collect();
    let mut iterations = outcome.iterations;

    if outcome.reason == StopReason::Stagnated && iterations < options.max_iter {
        restarted = true;
        let budget = POLISH_EVALS_PER_PARAMETER * outcome.x.len();
        let (x_polished, f_polished) = nelder_mead(&mut problem, &outcome.x, outcome.value, budget);
        if f_polished < outcome.value {
            trace.push(-f_polished);
        }
        if let Some(g) = problem.gradient(&x_polished) {
            let remaining = options.max_iter - iterations;
            let second = bfgs(&mut problem, x_polished, f_polished, g, options.grad_tol, remaining);
            trace.extend(second.trace.iter().skip(1).map(|&v| -v));
            iterations += second.iterations;
            outcome = second;
        }
    }

    let theta_hat = objective.theta(&outcome.x)?;
    let loglik_at_hat = objective.lik.loglik(&theta_hat)?;
    let grad_norm = outcome.gradient.norm();
    Ok(FitResult {
        boundary_flags: boundary_flags(&theta_hat, &options.thresholds),
        theta_hat,
        loglik_at_hat,
        penalized_value: -outcome.value,
        converged: grad_norm <= options.grad_tol,
        iterations,
        grad_norm,
        se: None,
        method: options.method,
        approximation: options.approx,
        stop_reason: outcome.reason,
        thresholds: options.thresholds,
        restarted,
        objective_trace: trace,
    })
}

//! Inner mode finding for the per-cluster integrand.
//!
//! Work happens in whitened coordinates `v = L⁻¹u`, where the exponent is
//! `g̃(v) = Σ_j [y_j η_j − log(1 + e^{η_j})] − ½ vᵀv` with `η = Xβ + ZLv`.
//! Its negative Hessian `AᵀWA + I` (`A = ZL`) is positive definite for every
//! θ, and the map back to `u` space is `û = Lv̂`, `H_u = L⁻ᵀ H_v L⁻¹`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{bernoulli_loglik, logistic, Cluster, Theta};
use crate::scalar::{lit, to_f64, Real};

pub const MAX_NEWTON_ITERATIONS: usize = 200;

/// Mode of the integrand exponent and its curvature, in `u` coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterMode<T: Real> {
    pub u_hat: DVector<T>,
    pub neg_hessian: DMatrix<T>,
}

/// Per-cluster pieces that do not depend on `v`.
pub(crate) struct ClusterProblem<'a, T: Real> {
    pub y: &'a [u8],
    pub eta_fixed: DVector<T>,
    /// `Z_i L`.
    pub a: DMatrix<T>,
}

impl<'a, T: Real> ClusterProblem<'a, T> {
    pub fn new(cluster: &'a Cluster<T>, theta: &Theta<T>, lower: &DMatrix<T>) -> Self {
        Self {
            y: cluster.y(),
            eta_fixed: cluster.x() * theta.beta(),
            a: cluster.z() * lower,
        }
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    /// `g̃(v)`.
    pub fn exponent(&self, v: &DVector<T>) -> T {
        let eta = &self.eta_fixed + &self.a * v;
        let ll = self
            .y
            .iter()
            .zip(eta.iter())
            .fold(T::zero(), |acc, (&y, &e)| acc + bernoulli_loglik(y, e));
        ll - v.dot(v) * lit(0.5)
    }

    /// `g̃(v)` for scalar `v` (q = 1), allocation free.
    pub fn exponent_scalar(&self, v: T) -> T {
        let mut ll = T::zero();
        for (j, &y) in self.y.iter().enumerate() {
            ll += bernoulli_loglik(y, self.eta_fixed[j] + self.a[(j, 0)] * v);
        }
        ll - v * v * lit(0.5)
    }

    /// Value, gradient and negative Hessian of `g̃` at `v`.
    fn derivatives(&self, v: &DVector<T>) -> (T, DVector<T>, DMatrix<T>) {
        let q = self.dim();
        let eta = &self.eta_fixed + &self.a * v;
        let mut value = T::zero();
        let mut grad = -v.clone();
        let mut hess = DMatrix::<T>::identity(q, q);
        for (j, &y) in self.y.iter().enumerate() {
            let e = eta[j];
            value += bernoulli_loglik(y, e);
            let mu = logistic(e);
            let resid = if y == 1 { T::one() - mu } else { -mu };
            let w = mu * (T::one() - mu);
            for r in 0..q {
                let ar = self.a[(j, r)];
                grad[r] += ar * resid;
                for c in 0..=r {
                    hess[(r, c)] += w * ar * self.a[(j, c)];
                }
            }
        }
        for r in 0..q {
            for c in 0..r {
                hess[(c, r)] = hess[(r, c)];
            }
        }
        value -= v.dot(v) * lit(0.5);
        (value, grad, hess)
    }
}

/// Converged inner optimum in whitened coordinates.
pub(crate) struct WhitenedMode<T: Real> {
    pub v: DVector<T>,
    pub value: T,
    pub neg_hessian: DMatrix<T>,
    pub log_det_neg_hessian: T,
}

fn gradient_tolerance<T: Real>() -> T {
    lit::<T>(1e-10).max(T::eps() * lit(100.0))
}

/// Damped Newton ascent on `g̃` from `start` (or the origin).
pub(crate) fn whitened_mode<T: Real>(
    problem: &ClusterProblem<'_, T>,
    start: Option<&DVector<T>>,
    cluster_index: usize,
) -> Result<WhitenedMode<T>> {
    let q = problem.dim();
    let mut v = match start {
        Some(s) if s.len() == q && s.iter().all(|x| x.is_finite()) => s.clone(),
        _ => DVector::zeros(q),
    };
    let tol = gradient_tolerance::<T>();
    let slack = T::eps() * lit(8.0);
    let mut converged_at: Option<usize> = None;
    let mut last_grad_norm = T::zero();

    for iteration in 0..MAX_NEWTON_ITERATIONS {
        let (value, grad, hess) = problem.derivatives(&v);
        let grad_norm = grad.norm();
        last_grad_norm = grad_norm;
        if !value.is_finite() || !grad_norm.is_finite() {
            break;
        }
        if grad_norm <= tol && converged_at.is_none() {
            converged_at = Some(iteration);
        }
        let chol = match hess.clone().cholesky() {
            Some(c) => c,
            None => break,
        };
        let step = chol.solve(&grad);
        let step_norm = step.norm();
        // Newton decrement: scale free, so it still works when σ is huge and
        // the raw gradient cannot reach an absolute tolerance.
        if converged_at.is_none() && grad.dot(&step) <= T::eps() * lit(16.0) * (T::one() + value.abs()) {
            converged_at = Some(iteration);
        }

        if let Some(at) = converged_at {
            // Polish: a couple of full Newton steps take v̂ to working precision,
            // which keeps ℓ(θ) smooth enough for finite differencing.
            let tiny = T::eps() * lit::<T>(4.0) * (T::one() + v.norm());
            if step_norm <= tiny || iteration >= at + 3 {
                let log_det = chol.l().diagonal().iter().fold(T::zero(), |a, d| a + d.ln()) * lit(2.0);
                return Ok(WhitenedMode { v, value, neg_hessian: hess, log_det_neg_hessian: log_det });
            }
            let candidate = &v + &step;
            if problem.exponent(&candidate) >= value - slack * (T::one() + value.abs()) {
                v = candidate;
            } else {
                let log_det = chol.l().diagonal().iter().fold(T::zero(), |a, d| a + d.ln()) * lit(2.0);
                return Ok(WhitenedMode { v, value, neg_hessian: hess, log_det_neg_hessian: log_det });
            }
            continue;
        }

        let mut t = T::one();
        let mut accepted = false;
        let resolution = T::eps() * (T::one() + v.norm());
        while step_norm * t > resolution {
            let candidate = &v + &step * t;
            let cand_value = problem.exponent(&candidate);
            if cand_value.is_finite() && cand_value >= value - slack * (T::one() + value.abs()) {
                v = candidate;
                accepted = true;
                break;
            }
            t *= lit(0.5);
        }
        if !accepted {
            // No representable ascent step: with a huge scale the optimum is
            // pinned at the resolution of v even though the raw gradient is not
            // small. Otherwise defer to the Newton decrement.
            if step_norm * t <= resolution || grad.dot(&step) <= T::eps() * lit(64.0) * (T::one() + value.abs()) {
                converged_at = Some(iteration);
                continue;
            }
            break;
        }
    }

    Err(Error::ModeFinding {
        cluster: cluster_index,
        iterations: MAX_NEWTON_ITERATIONS,
        grad_norm: to_f64(last_grad_norm),
        last_iterate: v.iter().map(|&x| to_f64(x)).collect(),
    })
}

/// Maximizer `û` of `g(u) = conditional_loglik(cluster, β, u) − ½uᵀΣ⁻¹u` and
/// the negative Hessian `ZᵀW(û)Z + Σ⁻¹` there.
pub fn cluster_mode<T: Real>(cluster: &Cluster<T>, theta: &Theta<T>) -> Result<ClusterMode<T>> {
    if cluster.x().ncols() != theta.p() || cluster.z().ncols() != theta.q() {
        return Err(Error::Dimension("theta does not match the cluster design".into()));
    }
    let lower = theta.lower_cholesky();
    let problem = ClusterProblem::new(cluster, theta, &lower);
    let mode = whitened_mode(&problem, None, 0)?;
    let u_hat = &lower * &mode.v;
    let lower_inv = lower
        .clone()
        .solve_lower_triangular(&DMatrix::identity(theta.q(), theta.q()))
        .ok_or(Error::NotPositiveDefinite)?;
    let neg_hessian = lower_inv.transpose() * &mode.neg_hessian * &lower_inv;
    Ok(ClusterMode { u_hat, neg_hessian })
}

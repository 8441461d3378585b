//! Approximate marginal log-likelihood of the clustered logistic model.
//!
//! `ℓ(θ) = Σ_i log ∫ p(y_i | u) φ_q(u; 0, Σ) du`, each integral approximated
//! either by adaptive Gauss–Hermite quadrature (q = 1) or by the Laplace
//! approximation (any q). Both are centred at the cluster mode; see
//! [`mode`] for the whitened coordinates used internally.

mod gauss_hermite;
mod mode;

use std::sync::Mutex;

use nalgebra::DVector;
use rayon::prelude::*;

pub use gauss_hermite::{gauss_hermite_rule, QuadratureRule, MAX_NODES};
pub use mode::{cluster_mode, ClusterMode, MAX_NEWTON_ITERATIONS};

use crate::error::{Error, Result};
use crate::model::{ClusteredDataset, Theta};
use crate::scalar::{lit, Real};
use mode::{whitened_mode, ClusterProblem};

/// Default number of quadrature nodes for q = 1 fits.
pub const DEFAULT_QUADRATURE_NODES: usize = 100;

/// Clusters at or above this count are evaluated on the rayon pool.
const PARALLEL_CLUSTER_THRESHOLD: usize = 64;

/// Integral approximation used for `ℓ(θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Approximation {
    /// Adaptive Gauss–Hermite quadrature with the given number of nodes.
    Agq(usize),
    Laplace,
}

impl Approximation {
    /// AGQ(100) for scalar random effects, Laplace otherwise.
    pub fn default_for(q: usize) -> Self {
        if q == 1 {
            Approximation::Agq(DEFAULT_QUADRATURE_NODES)
        } else {
            Approximation::Laplace
        }
    }
}

impl std::fmt::Display for Approximation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Approximation::Agq(q) => write!(f, "agq({q})"),
            Approximation::Laplace => write!(f, "laplace"),
        }
    }
}

enum Integrator<T: Real> {
    Agq(QuadratureRule<T>),
    Laplace,
}

/// Evaluator for the approximate log-likelihood on one dataset.
///
/// Cluster modes from the previous evaluation are kept and used as Newton
/// starting points, so a sequence of nearby θ (as produced by an optimizer or
/// a finite-difference stencil) costs only a few inner iterations each.
pub struct ApproxLikelihood<'a, T: Real> {
    data: &'a ClusteredDataset<T>,
    integrator: Integrator<T>,
    approximation: Approximation,
    warm_starts: Vec<Mutex<Option<DVector<T>>>>,
}

impl<'a, T: Real> ApproxLikelihood<'a, T> {
    pub fn new(data: &'a ClusteredDataset<T>, approximation: Approximation) -> Result<Self> {
        let integrator = match approximation {
            Approximation::Agq(nodes) => {
                if data.q() != 1 {
                    return Err(Error::UnsupportedDimension(data.q()));
                }
                Integrator::Agq(gauss_hermite_rule(nodes)?)
            }
            Approximation::Laplace => Integrator::Laplace,
        };
        Ok(Self {
            data,
            integrator,
            approximation,
            warm_starts: (0..data.k()).map(|_| Mutex::new(None)).collect(),
        })
    }

    pub fn approximation(&self) -> Approximation {
        self.approximation
    }

    pub fn data(&self) -> &ClusteredDataset<T> {
        self.data
    }

    /// Per-cluster log marginal probabilities `log P(y_i)`, in cluster order.
    pub fn cluster_terms(&self, theta: &Theta<T>) -> Result<Vec<T>> {
        if theta.p() != self.data.p() || theta.q() != self.data.q() {
            return Err(Error::Dimension(format!(
                "theta has p = {}, q = {} but data has p = {}, q = {}",
                theta.p(),
                theta.q(),
                self.data.p(),
                self.data.q()
            )));
        }
        let lower = theta.lower_cholesky();
        let term = |i: usize| self.cluster_term(i, theta, &lower);
        if self.data.k() >= PARALLEL_CLUSTER_THRESHOLD {
            (0..self.data.k()).into_par_iter().map(term).collect()
        } else {
            (0..self.data.k()).map(term).collect()
        }
    }

    /// `ℓ(θ)`; the cluster sum is reduced in cluster order with compensation,
    /// which keeps finite-difference gradients usable for large k.
    pub fn loglik(&self, theta: &Theta<T>) -> Result<T> {
        Ok(compensated_sum(self.cluster_terms(theta)?))
    }

    fn cluster_term(&self, i: usize, theta: &Theta<T>, lower: &nalgebra::DMatrix<T>) -> Result<T> {
        let cluster = &self.data.clusters()[i];
        let problem = ClusterProblem::new(cluster, theta, lower);
        let mut slot = self.warm_starts[i].lock().unwrap_or_else(|e| e.into_inner());
        let mode = whitened_mode(&problem, slot.as_ref(), i)?;
        *slot = Some(mode.v.clone());
        drop(slot);

        let half_log_two_pi = lit::<T>(0.5) * T::two_pi().ln();
        match &self.integrator {
            Integrator::Laplace => Ok(mode.value - lit::<T>(0.5) * mode.log_det_neg_hessian),
            Integrator::Agq(rule) => {
                // ∫ exp(g̃) dv ≈ √2 τ Σ_m w_m exp(x_m²) exp(g̃(v̂ + √2 τ x_m)), τ² = 1/H
                let tau = mode.neg_hessian[(0, 0)].sqrt().recip();
                let scale = lit::<T>(2.0).sqrt() * tau;
                let center = mode.v[0];
                let logs: Vec<T> = rule
                    .nodes()
                    .iter()
                    .zip(rule.log_weights())
                    .map(|(&x, &lw)| lw + x * x + problem.exponent_scalar(center + scale * x))
                    .collect();
                Ok(scale.ln() + log_sum_exp(&logs) - half_log_two_pi)
            }
        }
    }
}

/// Neumaier's compensated summation.
pub fn compensated_sum<T: Real>(values: impl IntoIterator<Item = T>) -> T {
    let (mut sum, mut carry) = (T::zero(), T::zero());
    for v in values {
        let t = sum + v;
        carry += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + carry
}

/// `log Σ exp(a_m)` without overflow.
pub fn log_sum_exp<T: Real>(values: &[T]) -> T {
    let max = values.iter().copied().fold(T::min_value().unwrap_or(-T::one()), |a, b| a.max(b));
    if !max.is_finite() {
        return max;
    }
    let sum = values.iter().fold(T::zero(), |acc, &v| acc + (v - max).exp());
    max + sum.ln()
}

/// AGQ approximation of `ℓ(θ)`; requires q = 1.
pub fn agq_loglik<T: Real>(data: &ClusteredDataset<T>, theta: &Theta<T>, rule: &QuadratureRule<T>) -> Result<T> {
    if data.q() != 1 {
        return Err(Error::UnsupportedDimension(data.q()));
    }
    let evaluator = ApproxLikelihood {
        data,
        integrator: Integrator::Agq(rule.clone()),
        approximation: Approximation::Agq(rule.len()),
        warm_starts: (0..data.k()).map(|_| Mutex::new(None)).collect(),
    };
    evaluator.loglik(theta)
}

/// Laplace approximation of `ℓ(θ)`:
/// `Σ_i [g̃_i(v̂_i) − ½ log det H_i]`, which is
/// `Σ_i [g_i(û_i) − ½ log det(ZᵢᵀWᵢZᵢ + Σ⁻¹)] − (k/2) log det Σ` in `u` space.
/// The `(2π)^{q/2}` of the Gaussian integral cancels the `(2π)^{−q/2}` of the
/// random-effects density, so it coincides with one-node AGQ when q = 1.
pub fn laplace_loglik<T: Real>(data: &ClusteredDataset<T>, theta: &Theta<T>) -> Result<T> {
    ApproxLikelihood::new(data, Approximation::Laplace)?.loglik(theta)
}

//! Gauss–Hermite rules for the weight function `exp(−x²)`.
//!
//! Nodes come from the eigenvalues of the symmetric tridiagonal Jacobi matrix
//! (Golub–Welsch), are refined by Newton steps on the orthonormal Hermite
//! polynomial, and weights are taken from the Christoffel function so that the
//! tiny tail weights keep full relative accuracy. Everything is computed in
//! `f64` and then converted to the working scalar.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

pub const MAX_NODES: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule<T: Real> {
    nodes: Vec<T>,
    weights: Vec<T>,
    log_weights: Vec<T>,
}

impl<T: Real> QuadratureRule<T> {
    pub fn nodes(&self) -> &[T] {
        &self.nodes
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// `ln w_m`, finite even where `w_m` underflows in the working precision.
    pub fn log_weights(&self) -> &[T] {
        &self.log_weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Orthonormal Hermite values `h_0(x) .. h_n(x)` for weight `exp(−x²)`.
fn orthonormal_hermite(x: f64, n: usize) -> Vec<f64> {
    let mut h = Vec::with_capacity(n + 1);
    h.push(std::f64::consts::PI.powf(-0.25));
    if n >= 1 {
        h.push(std::f64::consts::SQRT_2 * x * h[0]);
    }
    for k in 1..n {
        let kf = k as f64;
        let next = (2.0 / (kf + 1.0)).sqrt() * x * h[k] - (kf / (kf + 1.0)).sqrt() * h[k - 1];
        h.push(next);
    }
    h
}

/// `Q`-point Gauss–Hermite rule, `1 ≤ Q ≤ 200`.
pub fn gauss_hermite_rule<T: Real>(q: usize) -> Result<QuadratureRule<T>> {
    if q == 0 || q > MAX_NODES {
        return Err(Error::Argument(format!(
            "number of quadrature nodes must be in 1..={MAX_NODES}, got {q}"
        )));
    }
    let jacobi = DMatrix::from_fn(q, q, |i, j| {
        if i + 1 == j {
            (j as f64 / 2.0).sqrt()
        } else if j + 1 == i {
            (i as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| a.total_cmp(b));

    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let h = orthonormal_hermite(*x, q);
            let derivative = (2.0 * q as f64).sqrt() * h[q - 1];
            if derivative == 0.0 {
                break;
            }
            let step = h[q] / derivative;
            *x -= step;
            if step.abs() <= 1e-16 * x.abs().max(1.0) {
                break;
            }
        }
    }
    // Exact symmetry about zero.
    for i in 0..q / 2 {
        let m = 0.5 * (nodes[q - 1 - i] - nodes[i]);
        nodes[i] = -m;
        nodes[q - 1 - i] = m;
    }
    if q % 2 == 1 {
        nodes[q / 2] = 0.0;
    }

    let log_weights: Vec<f64> = nodes
        .iter()
        .map(|&x| {
            let h = orthonormal_hermite(x, q - 1);
            -h.iter().map(|v| v * v).sum::<f64>().ln()
        })
        .collect();

    Ok(QuadratureRule {
        nodes: nodes.iter().map(|&x| lit(x)).collect(),
        weights: log_weights.iter().map(|&lw| lit(lw.exp())).collect(),
        log_weights: log_weights.iter().map(|&lw| lit(lw)).collect(),
    })
}

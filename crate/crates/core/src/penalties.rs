//! Soft penalties keeping estimates away from the boundary of the parameter
//! space.
//!
//! * fixed effects: `P_f(β) = ½ log det(XᵀWX)`, the log Jeffreys prior of the
//!   logistic model *without* random effects (`W` uses `η = Xβ` only);
//! * variance components: `P_v(ψ) = Σ_m D(ψ_m)` with the negative Huber loss
//!   `D`, applied to the log-Cholesky vector as stored;
//! * both scaled by `c = 2√(p/n)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{logistic, numerical_rank, psi_len, ClusteredDataset, Theta};
use crate::scalar::{count, lit, Real};

/// Penalty value with its gradient over the penalized block.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyValue<T: Real> {
    pub value: T,
    pub gradient: DVector<T>,
}

/// Negative Huber loss: `−x²/2` for `|x| ≤ 1`, `−|x| + ½` otherwise.
#[inline]
pub fn huber_d<T: Real>(x: T) -> T {
    let ax = x.abs();
    if ax <= T::one() {
        -x * x * lit(0.5)
    } else {
        -ax + lit(0.5)
    }
}

/// `dD/dx`, clamped to `[−1, 1]`.
#[inline]
pub fn huber_d_derivative<T: Real>(x: T) -> T {
    (-x).max(-T::one()).min(T::one())
}

pub fn variance_penalty<T: Real>(psi: &[T], q: usize) -> Result<PenaltyValue<T>> {
    if psi.len() != psi_len(q) {
        return Err(Error::Dimension(format!(
            "psi has length {} but q = {q} needs {}",
            psi.len(),
            psi_len(q)
        )));
    }
    let value = psi.iter().fold(T::zero(), |acc, &x| acc + huber_d(x));
    let gradient = DVector::from_iterator(psi.len(), psi.iter().map(|&x| huber_d_derivative(x)));
    Ok(PenaltyValue { value, gradient })
}

/// `½ log det(XᵀWX)` and its gradient
/// `∂/∂β_s = ½ Σ_t h_t (1 − 2μ_t) x_ts`, where `h_t` are the diagonal entries
/// of `X(XᵀWX)⁻¹XᵀW`.
pub fn jeffreys_penalty<T: Real>(x: &DMatrix<T>, beta: &DVector<T>) -> Result<PenaltyValue<T>> {
    let (n, p) = x.shape();
    if beta.len() != p {
        return Err(Error::Dimension(format!("beta has length {} but X has {p} columns", beta.len())));
    }
    if p == 0 || numerical_rank(x) < p {
        return Err(Error::SingularInformation);
    }
    let eta = x * beta;
    // log μ(1 − μ) = −|η| − 2 log(1 + e^{−|η|}); weights are kept relative to
    // the largest one so far-out β does not underflow them all.
    let log_w: Vec<T> = eta.iter().map(|&e| -e.abs() - lit::<T>(2.0) * (-e.abs()).exp().ln_1p()).collect();
    let shift = log_w.iter().fold(T::min_value().unwrap(), |a, &b| a.max(b));
    let weights: Vec<T> = log_w.iter().map(|&l| (l - shift).exp()).collect();
    // Heaviest rows first keeps Householder QR accurate on graded rows.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| weights[b].partial_cmp(&weights[a]).unwrap_or(std::cmp::Ordering::Equal));
    let scaled = DMatrix::from_fn(n, p, |r, c| weights[order[r]].sqrt() * x[(order[r], c)]);
    let r = scaled.qr().r();
    let log_det_r = r.diagonal().iter().fold(T::zero(), |a, d| a + d.abs().ln());
    let value = count::<T>(p) * shift * lit(0.5) + log_det_r;
    if !value.is_finite() {
        return Err(Error::SingularInformation);
    }
    // h_t = w_t ‖R⁻ᵀx_t‖²; the shift cancels.
    let solved = r
        .transpose()
        .solve_lower_triangular(&x.transpose())
        .ok_or(Error::SingularInformation)?;
    let mut gradient = DVector::zeros(p);
    for t in 0..n {
        let h = weights[t] * solved.column(t).norm_squared();
        let factor = h * (T::one() - lit::<T>(2.0) * logistic(eta[t])) * lit(0.5);
        for s in 0..p {
            gradient[s] += factor * x[(t, s)];
        }
    }
    Ok(PenaltyValue { value, gradient })
}

/// `c = 2√(p/n)`, used for both penalty blocks.
pub fn scale_factor<T: Real>(p: usize, n: usize) -> Result<T> {
    if p == 0 || n < p {
        return Err(Error::Argument(format!("scale factor needs n >= p >= 1, got p = {p}, n = {n}")));
    }
    Ok(lit::<T>(2.0) * (count::<T>(p) / count::<T>(n)).sqrt())
}

/// `c·P_f(β) + c·P_v(ψ)` with the gradient over the whole of θ.
pub fn composite_penalty<T: Real>(data: &ClusteredDataset<T>, theta: &Theta<T>) -> Result<PenaltyValue<T>> {
    if theta.p() != data.p() || theta.q() != data.q() {
        return Err(Error::Dimension("theta does not match the dataset".into()));
    }
    let c = scale_factor::<T>(data.p(), data.n())?;
    let fixed = jeffreys_penalty(data.stacked_x(), theta.beta())?;
    let variance = variance_penalty(theta.psi().as_slice(), theta.q())?;
    let gradient = DVector::from_iterator(
        theta.dim(),
        fixed.gradient.iter().chain(variance.gradient.iter()).map(|&g| g * c),
    );
    Ok(PenaltyValue { value: c * (fixed.value + variance.value), gradient })
}

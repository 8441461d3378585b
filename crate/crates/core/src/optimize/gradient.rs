use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

/// Default finite-difference step scale, `ε^{1/3}`.
pub fn default_step_scale<T: Real>() -> T {
    T::eps().powf(lit(1.0 / 3.0))
}

/// Central-difference gradient with per-coordinate step
/// `h_j = step_scale · max(1, |θ_j|)`.
///
/// A probe returning a non-finite value yields [`Error::Gradient`] naming the
/// coordinate; errors raised by `f` itself are passed through.
pub fn numeric_gradient<T, F>(mut f: F, theta: &DVector<T>, step_scale: T) -> Result<DVector<T>>
where
    T: Real,
    F: FnMut(&DVector<T>) -> Result<T>,
{
    let mut grad = DVector::zeros(theta.len());
    let mut probe = theta.clone();
    for j in 0..theta.len() {
        let base = theta[j];
        let nominal = step_scale * base.abs().max(T::one());
        // Use the step actually representable around θ_j.
        let up = base + nominal;
        let down = base - nominal;
        probe[j] = up;
        let f_up = f(&probe)?;
        probe[j] = down;
        let f_down = f(&probe)?;
        probe[j] = base;
        if !f_up.is_finite() || !f_down.is_finite() {
            return Err(Error::Gradient { coordinate: j });
        }
        grad[j] = (f_up - f_down) / (up - down);
    }
    Ok(grad)
}

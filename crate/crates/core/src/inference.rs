//! Wald standard errors, confidence intervals and fixed-effect contrasts.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::likelihood::{ApproxLikelihood, Approximation};
use crate::model::{ClusteredDataset, Theta};
use crate::optimize::{boundary_flags, FitResult};
use crate::penalties::scale_factor;
use crate::scalar::{lit, to_f64, Real};

/// Standard errors with availability; `None` marks an entry whose diagonal of
/// the inverse negative Hessian was not positive.
#[derive(Debug, Clone, PartialEq)]
pub struct WaldSummary<T: Real> {
    pub se: Vec<Option<T>>,
    /// Inverse negative Hessian, absent when the Hessian is singular.
    pub covariance: Option<DMatrix<T>>,
    /// Ratio of extreme singular values of the negative Hessian.
    pub condition_number: T,
}

impl<T: Real> WaldSummary<T> {
    pub fn all_available(&self) -> bool {
        self.se.iter().all(Option::is_some)
    }
}

/// Default Hessian step scale, `ε^{1/4}`.
pub fn hessian_step_scale<T: Real>() -> T {
    T::eps().powf(lit(0.25))
}

/// Central-difference Hessian of `f` with steps `step_scale · max(1, |θ_j|)`.
pub fn numeric_hessian<T, F>(mut f: F, theta: &DVector<T>, step_scale: T) -> Result<DMatrix<T>>
where
    T: Real,
    F: FnMut(&DVector<T>) -> Result<T>,
{
    let d = theta.len();
    let steps: Vec<T> = theta.iter().map(|t| step_scale * t.abs().max(T::one())).collect();
    let mut eval = |shifts: &[(usize, T)]| -> Result<T> {
        let mut probe = theta.clone();
        for &(j, s) in shifts {
            probe[j] += s;
        }
        let v = f(&probe)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Gradient { coordinate: shifts[0].0 })
        }
    };
    let center = eval(&[])?;
    let mut h = DMatrix::zeros(d, d);
    for i in 0..d {
        let hi = steps[i];
        let up = eval(&[(i, hi)])?;
        let down = eval(&[(i, -hi)])?;
        h[(i, i)] = (up - lit::<T>(2.0) * center + down) / (hi * hi);
        for j in 0..i {
            let hj = steps[j];
            let pp = eval(&[(i, hi), (j, hj)])?;
            let pm = eval(&[(i, hi), (j, -hj)])?;
            let mp = eval(&[(i, -hi), (j, hj)])?;
            let mm = eval(&[(i, -hi), (j, -hj)])?;
            let v = (pp - pm - mp + mm) / (lit::<T>(4.0) * hi * hj);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Ok(h)
}

/// Standard errors from a negative Hessian matrix.
pub fn se_from_negative_hessian<T: Real>(neg_hessian: &DMatrix<T>) -> WaldSummary<T> {
    let d = neg_hessian.nrows();
    let singular_values = neg_hessian.clone().svd(false, false).singular_values;
    let smax = singular_values.iter().fold(T::zero(), |a, &s| a.max(s));
    let smin = singular_values.iter().fold(smax, |a, &s| a.min(s));
    let condition_number = if smin > T::zero() { smax / smin } else { T::max_value().unwrap_or(smax) };
    let unavailable = || WaldSummary { se: vec![None; d], covariance: None, condition_number };
    if !(condition_number.is_finite() && condition_number * T::eps() < T::one()) {
        return unavailable();
    }
    let Some(inverse) = neg_hessian.clone().try_inverse() else {
        return unavailable();
    };
    let se = (0..d)
        .map(|j| {
            let v = inverse[(j, j)];
            (v > T::zero() && v.is_finite()).then(|| v.sqrt())
        })
        .collect();
    WaldSummary { se, covariance: Some(inverse), condition_number }
}

/// Wald standard errors from the unpenalized approximate log-likelihood at an
/// arbitrary `θ`.
pub fn wald_se_at<T: Real>(data: &ClusteredDataset<T>, theta: &Theta<T>, approx: Approximation) -> Result<WaldSummary<T>> {
    let lik = ApproxLikelihood::new(data, approx)?;
    let p = data.p();
    let neg = -numeric_hessian(
        |v| lik.loglik(&Theta::from_slice(v.as_slice(), p)?),
        &theta.to_vector(),
        hessian_step_scale(),
    )?;
    Ok(se_from_negative_hessian(&neg))
}

/// Wald standard errors at a converged fit.
pub fn wald_se<T: Real>(data: &ClusteredDataset<T>, fit: &FitResult<T>) -> Result<WaldSummary<T>> {
    if !fit.converged {
        return Err(Error::NotConverged);
    }
    wald_se_at(data, &fit.theta_hat, fit.approximation)
}

/// Invertible map `γ = Cβ` of the fixed effects.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastMap<T: Real> {
    c: DMatrix<T>,
    inverse: DMatrix<T>,
    log_abs_det: T,
}

impl<T: Real> ContrastMap<T> {
    pub fn new(c: DMatrix<T>) -> Result<Self> {
        if !c.is_square() || c.nrows() == 0 {
            return Err(Error::Argument(format!("contrast matrix must be square, got {}x{}", c.nrows(), c.ncols())));
        }
        let det = c.clone().lu().determinant();
        if !(det.abs() > lit(1e-12)) {
            return Err(Error::Argument(format!("contrast matrix is not invertible (det = {det})")));
        }
        let inverse = c.clone().try_inverse().ok_or_else(|| Error::Argument("contrast matrix is not invertible".into()))?;
        Ok(Self { log_abs_det: det.abs().ln(), c, inverse })
    }

    pub fn identity(p: usize) -> Self {
        Self { c: DMatrix::identity(p, p), inverse: DMatrix::identity(p, p), log_abs_det: T::zero() }
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.c
    }

    pub fn inverse(&self) -> &DMatrix<T> {
        &self.inverse
    }

    pub fn dim(&self) -> usize {
        self.c.nrows()
    }

    /// The dataset with design `XC⁻¹`, which leaves every linear predictor
    /// unchanged under `γ = Cβ`.
    pub fn transform_data(&self, data: &ClusteredDataset<T>, names: Vec<String>) -> Result<ClusteredDataset<T>> {
        self.check(data.p())?;
        data.with_fixed_design_map(&self.inverse, names)
    }

    pub fn transform_theta(&self, theta: &Theta<T>) -> Result<Theta<T>> {
        self.check(theta.p())?;
        Theta::new(&self.c * theta.beta(), theta.psi().clone())
    }

    fn check(&self, p: usize) -> Result<()> {
        if self.dim() == p {
            Ok(())
        } else {
            Err(Error::Dimension(format!("contrast is {0}x{0} but there are {p} fixed effects", self.dim())))
        }
    }
}

/// Express a fit in the `γ = Cβ` parameterization.
///
/// The log-likelihood is unchanged; the Jeffreys term shifts by
/// `−c·log|det C|`; standard errors follow from `J·Cov·Jᵀ` with
/// `J = diag(C, I)`. The gradient norm is carried over as is.
pub fn transform_fit<T: Real>(fit: &FitResult<T>, map: &ContrastMap<T>, data: &ClusteredDataset<T>) -> Result<FitResult<T>> {
    map.check(fit.theta_hat.p())?;
    let theta_hat = map.transform_theta(&fit.theta_hat)?;
    let shift = match fit.method {
        crate::optimize::Method::Ml => T::zero(),
        crate::optimize::Method::Mspl => -scale_factor::<T>(data.p(), data.n())? * map.log_abs_det,
    };
    let se = fit.se.as_ref().map(|summary| {
        let d = fit.theta_hat.dim();
        let p = map.dim();
        match &summary.covariance {
            Some(cov) => {
                let mut j = DMatrix::identity(d, d);
                j.view_mut((0, 0), (p, p)).copy_from(&map.c);
                let transformed = &j * cov * j.transpose();
                let se = (0..d)
                    .map(|i| {
                        let v = transformed[(i, i)];
                        (v > T::zero() && v.is_finite()).then(|| v.sqrt())
                    })
                    .collect();
                WaldSummary { se, covariance: Some(transformed), condition_number: summary.condition_number }
            }
            None => summary.clone(),
        }
    });
    let trace_shift = shift;
    Ok(FitResult {
        boundary_flags: boundary_flags(&theta_hat, &fit.thresholds),
        theta_hat,
        penalized_value: fit.penalized_value + shift,
        objective_trace: fit.objective_trace.iter().map(|&v| v + trace_shift).collect(),
        se,
        ..fit.clone()
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaldInterval<T: Real> {
    pub lower: T,
    pub upper: T,
    /// Set when the standard error is zero.
    pub zero_width: bool,
}

impl<T: Real> WaldInterval<T> {
    pub fn contains(&self, value: T) -> bool {
        self.lower <= value && value <= self.upper
    }
}

/// `estimate ± z_{(1+level)/2} · se`.
pub fn wald_ci<T: Real>(estimate: T, se: T, level: T) -> Result<WaldInterval<T>> {
    if !(level > T::zero() && level < T::one()) {
        return Err(Error::Argument(format!("confidence level must lie in (0, 1), got {level}")));
    }
    if !(se >= T::zero()) || !se.is_finite() {
        return Err(Error::Argument(format!("standard error must be finite and non-negative, got {se}")));
    }
    let z: T = lit(normal_quantile((1.0 + to_f64(level)) / 2.0));
    let half = z * se;
    Ok(WaldInterval { lower: estimate - half, upper: estimate + half, zero_width: se == T::zero() })
}

/// Standard normal quantile (Wichura's AS 241, about 1e-16 relative accuracy).
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = ((((((r * 2509.080_928_730_122_7 + 33430.575_583_588_128) * r + 67265.770_927_008_700) * r
            + 45921.953_931_549_871)
            * r
            + 13731.693_765_509_461)
            * r
            + 1971.590_950_306_551_3)
            * r
            + 133.141_667_891_784_38)
            * r
            + 3.387_132_872_796_366_5;
        let den = ((((((r * 5226.495_278_852_545_5 + 28729.085_735_721_943) * r + 39307.895_800_092_710) * r
            + 21213.794_301_586_595)
            * r
            + 5394.196_021_424_751_1)
            * r
            + 687.187_007_492_057_91)
            * r
            + 42.313_330_701_600_911)
            * r
            + 1.0;
        return q * num / den;
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let value = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((r * 7.745_450_142_783_414_1e-4 + 0.022_723_844_989_269_184) * r + 0.241_780_725_177_450_61) * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691_4)
            * r
            + 4.630_337_846_156_545_3)
            * r
            + 1.423_437_110_749_683_5;
        let den = ((((((r * 1.050_750_071_644_416_9e-9 + 5.475_938_084_995_344_9e-4) * r + 0.015_198_666_563_616_457) * r
            + 0.148_103_976_427_480_07)
            * r
            + 0.689_767_334_985_100_05)
            * r
            + 1.676_384_830_183_803_8)
            * r
            + 2.053_191_626_637_758_8)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((r * 2.010_334_399_292_288_1e-7 + 2.711_555_568_743_487_6e-5) * r + 0.001_242_660_947_388_078_4) * r
            + 0.026_532_189_526_576_123)
            * r
            + 0.296_560_571_828_504_89)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114_4)
            * r
            + 6.657_904_643_501_103_8;
        let den = ((((((r * 2.044_263_103_389_939_7e-15 + 1.421_511_758_316_446_0e-7) * r + 1.846_318_317_510_054_8e-5) * r
            + 7.868_691_311_456_132_6e-4)
            * r
            + 0.014_875_361_290_850_615)
            * r
            + 0.136_929_880_922_735_81)
            * r
            + 0.599_832_206_555_887_94)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -value
    } else {
        value
    }
}

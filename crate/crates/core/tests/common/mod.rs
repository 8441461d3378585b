#![allow(dead_code)]

use std::path::PathBuf;

use mspl::cli::{load_csv, DataSpec, Intercept};
use mspl::inference::wald_se_at;
use mspl::{Cluster64, Dataset64, FitResult64, Theta64};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

pub fn culcita_spec() -> DataSpec {
    DataSpec {
        response: "predation".into(),
        fixed: vec!["crabs".into(), "shrimp".into(), "both".into()],
        random: vec![],
        cluster: "block".into(),
        intercept: Intercept::Both,
    }
}

/// Culcita data, with the block-10 "none" zero removed when `trimmed`.
pub fn culcita(trimmed: bool) -> Dataset64 {
    let file = if trimmed { "culcita_trimmed.csv" } else { "culcita.csv" };
    load_csv(&data_path(file), &culcita_spec()).unwrap()
}

/// Maps (β0, crabs, shrimp, both) with reference "none" to the
/// parameterization with reference "both".
pub fn both_reference_contrast() -> DMatrix<f64> {
    DMatrix::from_row_slice(
        4,
        4,
        &[
            1.0, 0.0, 0.0, 1.0, //
            0.0, 1.0, 0.0, -1.0, //
            0.0, 0.0, 1.0, -1.0, //
            0.0, 0.0, 0.0, -1.0,
        ],
    )
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random dataset: intercept plus `p − 1` normal covariates, random-effect
/// design made of an intercept plus `q − 1` normal covariates, uniform
/// random responses.
pub fn random_dataset(rng: &mut impl Rng, k: usize, sizes: std::ops::RangeInclusive<usize>, p: usize, q: usize) -> Dataset64 {
    loop {
        let clusters: Vec<Cluster64> = (0..k)
            .map(|_| {
                let n = rng.random_range(sizes.clone());
                let x = DMatrix::from_fn(n, p, |_, c| if c == 0 { 1.0 } else { rng.random_range(-1.5..1.5) });
                let z = DMatrix::from_fn(n, q, |_, c| if c == 0 { 1.0 } else { rng.random_range(-1.5..1.5) });
                let y = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
                Cluster64::new(y, x, z).unwrap()
            })
            .collect();
        if let Ok(d) = Dataset64::new(clusters) {
            return d;
        }
    }
}

pub fn random_theta(rng: &mut impl Rng, p: usize, q: usize, beta_scale: f64, psi_range: (f64, f64)) -> Theta64 {
    let beta = DVector::from_fn(p, |_, _| rng.random_range(-beta_scale..beta_scale));
    let psi = DVector::from_fn(q * (q + 1) / 2, |_, _| rng.random_range(psi_range.0..psi_range.1));
    Theta64::new(beta, psi).unwrap()
}

// Independent reference numerics used by the oracles below.

pub fn ref_log1pexp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn ref_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Plain fixed-effects logistic log-likelihood.
pub fn glm_loglik(data: &Dataset64, beta: &DVector<f64>) -> f64 {
    data.clusters()
        .iter()
        .flat_map(|c| {
            let eta = c.x() * beta;
            c.y().iter().zip(eta.iter()).map(|(&y, &e)| f64::from(y) * e - ref_log1pexp(e)).collect::<Vec<_>>()
        })
        .sum()
}

/// `log p(y_i | u) + log φ(u; 0, σ²)` for a scalar random effect.
fn scalar_integrand(c: &Cluster64, beta: &DVector<f64>, sigma: f64, u: f64) -> (f64, f64, f64) {
    let eta = c.x() * beta;
    let mut value = -0.5 * (u / sigma).powi(2) - 0.5 * (2.0 * std::f64::consts::PI * sigma * sigma).ln();
    let mut d1 = -u / (sigma * sigma);
    let mut d2 = -1.0 / (sigma * sigma);
    for t in 0..c.len() {
        let z = c.z()[(t, 0)];
        let e = eta[t] + z * u;
        let mu = ref_sigmoid(e);
        value += f64::from(c.y()[t]) * e - ref_log1pexp(e);
        d1 += (f64::from(c.y()[t]) - mu) * z;
        d2 -= mu * (1.0 - mu) * z * z;
    }
    (value, d1, d2)
}

/// Brute-force `Σ_i log ∫ p(y_i|u) φ(u) du` by the trapezoid rule on
/// `û ± 12·max(τ, σ)` with `points` nodes; the mode is found by bisection.
pub fn trapezoid_loglik(data: &Dataset64, theta: &Theta64, points: usize) -> f64 {
    assert_eq!(data.q(), 1);
    let sigma = theta.psi()[0].exp();
    data.clusters()
        .iter()
        .map(|c| {
            let (mut lo, mut hi) = (-1.0, 1.0);
            while scalar_integrand(c, theta.beta(), sigma, lo).1 < 0.0 {
                lo *= 2.0;
            }
            while scalar_integrand(c, theta.beta(), sigma, hi).1 > 0.0 {
                hi *= 2.0;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if scalar_integrand(c, theta.beta(), sigma, mid).1 > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let mode = 0.5 * (lo + hi);
            let tau = 1.0 / (-scalar_integrand(c, theta.beta(), sigma, mode).2).sqrt();
            let half = 12.0 * tau.max(sigma);
            let (a, b) = (mode - half, mode + half);
            let h = (b - a) / (points - 1) as f64;
            let logs: Vec<f64> = (0..points)
                .map(|m| {
                    let w: f64 = if m == 0 || m == points - 1 { 0.5 } else { 1.0 };
                    w.ln() + scalar_integrand(c, theta.beta(), sigma, a + h * m as f64).0
                })
                .collect();
            let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + h.ln()
        })
        .sum()
}

/// `log p(y_i | u) + log φ_q(u; 0, Σ)` for general q, with Σ = LLᵀ.
pub fn multivariate_integrand(c: &Cluster64, beta: &DVector<f64>, lower: &DMatrix<f64>, u: &DVector<f64>) -> f64 {
    let q = u.len();
    let eta = c.x() * beta + c.z() * u;
    let mut value: f64 = c.y().iter().zip(eta.iter()).map(|(&y, &e)| f64::from(y) * e - ref_log1pexp(e)).sum();
    let w = lower.clone().solve_lower_triangular(u).unwrap();
    let log_det_l: f64 = (0..q).map(|i| lower[(i, i)].ln()).sum();
    value += -0.5 * w.norm_squared() - log_det_l - 0.5 * q as f64 * (2.0 * std::f64::consts::PI).ln();
    value
}

/// Lower Cholesky factor implied by a log-Cholesky vector (q = 2 only).
pub fn lower_q2(psi: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[psi[0].exp(), 0.0, psi[2], psi[1].exp()])
}

/// Mode and negative Hessian of the q = 2 integrand by plain Newton.
pub fn mode_q2(c: &Cluster64, beta: &DVector<f64>, lower: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sigma = lower * lower.transpose();
    let prec = sigma.try_inverse().unwrap();
    let eta0 = c.x() * beta;
    let mut u = DVector::zeros(2);
    let mut h = DMatrix::zeros(2, 2);
    for _ in 0..100 {
        let eta = &eta0 + c.z() * &u;
        let mut g = -(&prec * &u);
        h = prec.clone();
        for t in 0..c.len() {
            let mu = ref_sigmoid(eta[t]);
            let z = c.z().row(t).transpose();
            g += &z * (f64::from(c.y()[t]) - mu);
            h += &z * z.transpose() * (mu * (1.0 - mu));
        }
        let step = h.clone().lu().solve(&g).unwrap();
        u += &step;
        if step.norm() < 1e-14 {
            break;
        }
    }
    (u, h)
}

/// Dense 2-D trapezoid integration of `f` in the coordinates
/// `u = û + R s`, `R = chol(H⁻¹)`, over `s ∈ [−span, span]²`.
pub fn tensor_trapezoid_log(
    f: impl Fn(&DVector<f64>) -> f64,
    center: &DVector<f64>,
    neg_hessian: &DMatrix<f64>,
    span: f64,
    points: usize,
) -> f64 {
    let r = neg_hessian.clone().try_inverse().unwrap().cholesky().unwrap().l();
    let jac = r[(0, 0)] * r[(1, 1)];
    let h = 2.0 * span / (points - 1) as f64;
    let mut logs = Vec::with_capacity(points * points);
    for a in 0..points {
        for b in 0..points {
            let s = DVector::from_vec(vec![-span + h * a as f64, -span + h * b as f64]);
            let wa = if a == 0 || a == points - 1 { 0.5f64 } else { 1.0 };
            let wb = if b == 0 || b == points - 1 { 0.5f64 } else { 1.0 };
            logs.push((wa * wb).ln() + f(&(center + &r * s)));
        }
    }
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + 2.0 * h.ln() + jac.ln()
}

/// Complete-separation dataset with q = 1: y = 1 exactly when x > 0.
pub fn separated_dataset() -> Dataset64 {
    let xs = [-2.0, -1.5, -1.0, -0.5, 0.5, 1.0, 1.5, 2.0];
    let clusters = (0..4)
        .map(|g| {
            let rows: Vec<f64> = xs.iter().map(|x| x + 0.1 * g as f64).collect();
            let y = rows.iter().map(|&x| u8::from(x > 0.0)).collect();
            let x = DMatrix::from_fn(rows.len(), 2, |r, c| if c == 0 { 1.0 } else { rows[r] });
            Cluster64::new(y, x, DMatrix::from_element(rows.len(), 1, 1.0)).unwrap()
        })
        .collect();
    Dataset64::new(clusters).unwrap()
}

/// q = 2 random intercept and slope where the slope carries no between-cluster
/// variation, so ML drives its variance to zero. ML stops wherever the
/// gradient in log l22 drops below tolerance, so the θ thresholds alone need
/// not catch it; the SE for log l22 does.
pub fn degenerate_slope_dataset() -> Dataset64 {
    let mut r = rng(20240607);
    let clusters = (0..12)
        .map(|i| {
            let n = 10;
            let u0: f64 = if i % 2 == 0 { 0.8 } else { -0.8 };
            let t: Vec<f64> = (0..n).map(|j| -1.0 + 2.0 * j as f64 / (n - 1) as f64).collect();
            let y = t.iter().map(|&tj| u8::from(r.random::<f64>() < ref_sigmoid(0.2 + 0.5 * tj + u0))).collect();
            let x = DMatrix::from_fn(n, 2, |row, c| if c == 0 { 1.0 } else { t[row] });
            Cluster64::new(y, x.clone(), x).unwrap()
        })
        .collect();
    Dataset64::new(clusters).unwrap()
}

/// Boundary flags or, failing those, an unavailable or oversized Wald SE.
pub fn flagged_with_se(data: &Dataset64, result: &FitResult64) -> bool {
    result.is_flagged()
        || wald_se_at(data, &result.theta_hat, result.approximation).map_or(true, |w| result.se_flagged(&w.se))
}

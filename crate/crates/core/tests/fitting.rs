mod common;

use common::*;
use mspl::likelihood::{agq_loglik, gauss_hermite_rule};
use mspl::optimize::{fit, numeric_gradient, objective};
use mspl::penalties::composite_penalty;
use mspl::{Approximation, Cluster64, Dataset64, FitOptions64, Method, Theta64};
use nalgebra::{dvector, DMatrix, DVector};
use rand::Rng;

const TABLE2_MSPL: [f64; 5] = [8.05, -6.90, -7.87, -9.64, 1.72];

fn culcita_options(method: Method) -> FitOptions64 {
    FitOptions64::new(method, Approximation::Agq(100))
}

#[test]
fn culcita_mspl_matches_published_estimates() {
    let data = culcita(true);
    let result = fit(&data, &culcita_options(Method::Mspl)).unwrap();
    assert!(result.converged);
    assert!(!result.is_flagged());
    let est = result.theta_hat.to_vector();
    for (e, t) in est.iter().zip(TABLE2_MSPL) {
        assert!((e - t).abs() < 0.15, "{est}");
    }
    assert!(result.grad_norm <= 1e-6);
}

#[test]
fn culcita_ml_runs_to_the_boundary() {
    let data = culcita(true);
    let result = fit(&data, &culcita_options(Method::Ml)).unwrap();
    assert!(result.is_flagged());
    assert!(result.theta_hat.beta().amax() > 12.0, "{}", result.theta_hat.beta());
}

#[test]
fn fits_are_deterministic_and_monotone() {
    let data = culcita(true);
    let a = fit(&data, &culcita_options(Method::Mspl)).unwrap();
    let b = fit(&data, &culcita_options(Method::Mspl)).unwrap();
    assert_eq!(a.theta_hat.to_vector(), b.theta_hat.to_vector());
    assert_eq!(a.objective_trace, b.objective_trace);
    assert_eq!(a.grad_norm.to_bits(), b.grad_norm.to_bits());
    assert!(a.objective_trace.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn nearby_starts_reach_the_same_optimum() {
    let data = culcita(true);
    let base = fit(&data, &culcita_options(Method::Mspl)).unwrap();
    let mut r = rng(301);
    for _ in 0..3 {
        let offset = DVector::from_fn(5, |_, _| r.random_range(-1.0..1.0)).normalize() * r.random_range(0.5..2.0);
        let start = Theta64::from_slice((base.theta_hat.to_vector() + offset).as_slice(), 4).unwrap();
        let other = fit(&data, &culcita_options(Method::Mspl).with_start(start)).unwrap();
        assert!(other.converged);
        let gap = (other.theta_hat.to_vector() - base.theta_hat.to_vector()).amax();
        assert!(gap < 1e-4, "{gap}");
    }
}

/// MSPL objective for an intercept-only single cluster, written out from
/// scratch: trapezoid marginal likelihood, ½ log(n μ(1−μ)), Huber on ψ.
fn single_cluster_oracle(data: &Dataset64, b0: f64, psi: f64) -> f64 {
    let n = data.n() as f64;
    let c = 2.0 * (1.0 / n).sqrt();
    let mu = ref_sigmoid(b0);
    let jeffreys = 0.5 * (n * mu * (1.0 - mu)).ln();
    let huber = if psi.abs() <= 1.0 { -0.5 * psi * psi } else { 0.5 - psi.abs() };
    let theta = Theta64::new(dvector![b0], dvector![psi]).unwrap();
    trapezoid_loglik(data, &theta, 2001) + c * (jeffreys + huber)
}

#[test]
fn balanced_single_cluster_matches_grid_search() {
    let y = vec![0, 1, 0, 1, 1, 0];
    let n = y.len();
    let cluster = Cluster64::new(y, DMatrix::from_element(n, 1, 1.0), DMatrix::from_element(n, 1, 1.0)).unwrap();
    let data = Dataset64::new(vec![cluster]).unwrap();
    let result = fit(&data, &FitOptions64::new(Method::Mspl, Approximation::Agq(50))).unwrap();
    assert!(result.converged);
    let (b0, psi) = (result.theta_hat.beta()[0], result.theta_hat.psi()[0]);
    assert!(b0.abs() < 1e-4, "{b0}");

    let (mut best, mut arg) = (f64::NEG_INFINITY, (0.0, 0.0));
    for i in 0..201 {
        for j in 0..201 {
            let (gb, gp) = (-1.0 + 0.01 * i as f64, -3.0 + 0.02 * j as f64);
            let v = single_cluster_oracle(&data, gb, gp);
            if v > best {
                best = v;
                arg = (gb, gp);
            }
        }
    }
    assert!((b0 - arg.0).abs() <= 0.01);
    assert!((psi - arg.1).abs() <= 0.02);
    assert!(result.penalized_value >= best - 1e-6);
}

#[test]
fn mspl_stays_interior_on_separated_data() {
    let data = separated_dataset();
    let mspl = fit(&data, &FitOptions64::new(Method::Mspl, Approximation::Agq(20))).unwrap();
    assert!(mspl.converged);
    assert!(!mspl.is_flagged());
    assert!(mspl.theta_hat.to_vector().iter().all(|v| v.is_finite()));
    let ml = fit(&data, &FitOptions64::new(Method::Ml, Approximation::Agq(20))).unwrap();
    assert!(ml.is_flagged());
}

#[test]
fn mspl_stays_interior_on_degenerate_slope_design() {
    let data = degenerate_slope_dataset();
    let options = |m| FitOptions64::new(m, Approximation::Laplace);
    let mspl = fit(&data, &options(Method::Mspl)).unwrap();
    assert!(mspl.converged);
    assert!(!flagged_with_se(&data, &mspl));
    assert!(mspl.theta_hat.sigma().min_eigenvalue() > 0.0);
    let ml = fit(&data, &options(Method::Ml)).unwrap();
    assert!(ml.theta_hat.psi()[1] < -5.0);
    assert!(flagged_with_se(&data, &ml));
}

#[test]
fn huge_variance_is_penalized_below_unit_variance() {
    let data = culcita(true);
    let options = culcita_options(Method::Mspl);
    let beta = [8.05, -6.90, -7.87, -9.64];
    let at = |psi: f64| {
        let mut v = beta.to_vec();
        v.push(psi);
        objective(&data, &Theta64::from_slice(&v, 4).unwrap(), &options).unwrap()
    };
    assert!(at(12.0) < at(0.0), "{} vs {}", at(12.0), at(0.0));
}

#[test]
fn separating_path_raises_ml_and_lowers_mspl() {
    let data = separated_dataset();
    // y = 1 exactly when x > 0, so β = (0, s) separates as s grows.
    let path = |method, s: f64| {
        let options = FitOptions64::new(method, Approximation::Agq(20));
        objective(&data, &Theta64::from_slice(&[0.0, s, 0.0], 2).unwrap(), &options).unwrap()
    };
    let scales = [1.0, 10.0, 100.0, 1000.0];
    let ml: Vec<f64> = scales.iter().map(|&s| path(Method::Ml, s)).collect();
    let mspl: Vec<f64> = scales.iter().map(|&s| path(Method::Mspl, s)).collect();
    assert!(ml.windows(2).all(|w| w[1] >= w[0]), "{ml:?}");
    assert!(ml.iter().all(|&v| v <= 1e-12), "{ml:?}");
    assert!(mspl[3] < mspl[2] && mspl[2] < mspl[1], "{mspl:?}");
}

#[test]
fn numeric_gradient_agrees_with_richardson_on_agq() {
    let mut r = rng(302);
    let data = random_dataset(&mut r, 2, 3..=5, 2, 1);
    let rule = gauss_hermite_rule(20).unwrap();
    let theta = random_theta(&mut r, 2, 1, 1.0, (-0.5, 0.5));
    let f = |v: &DVector<f64>| agq_loglik(&data, &Theta64::from_slice(v.as_slice(), 2).unwrap(), &rule);
    let x = theta.to_vector();
    let grad = numeric_gradient(f, &x, f64::EPSILON.cbrt()).unwrap();
    for j in 0..x.len() {
        let d = |h: f64| {
            let mut a = x.clone();
            let mut b = x.clone();
            a[j] += h;
            b[j] -= h;
            (f(&a).unwrap() - f(&b).unwrap()) / (2.0 * h)
        };
        let rich = (16.0 * d(1e-3) - d(2e-3)) / 15.0;
        assert!((grad[j] - rich).abs() < 1e-4, "{} vs {rich}", grad[j]);
    }
}

#[test]
fn numeric_gradient_agrees_with_analytic_penalty_gradient() {
    let mut r = rng(303);
    for _ in 0..10 {
        let data = random_dataset(&mut r, 5, 3..=6, 3, 1);
        let theta = random_theta(&mut r, 3, 1, 1.5, (-0.9, 0.9));
        let f = |v: &DVector<f64>| Ok(composite_penalty(&data, &Theta64::from_slice(v.as_slice(), 3).unwrap())?.value);
        let grad = numeric_gradient(f, &theta.to_vector(), f64::EPSILON.cbrt()).unwrap();
        let analytic = composite_penalty(&data, &theta).unwrap().gradient;
        for j in 0..grad.len() {
            let rel = (grad[j] - analytic[j]).abs() / analytic[j].abs().max(1e-3);
            assert!(rel < 1e-5, "{} vs {}", grad[j], analytic[j]);
        }
    }
}

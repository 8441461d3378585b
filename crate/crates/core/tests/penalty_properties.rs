mod common;

use common::*;
use mspl::penalties::{composite_penalty, huber_d, jeffreys_penalty, variance_penalty};
use mspl::{ApproxLikelihood, Approximation, Dataset64, Theta64};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

fn random_design(r: &mut impl Rng, n: usize, p: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, c| if c == 0 { 1.0 } else { r.random_range(-scale..scale) })
}

/// Richardson-extrapolated central difference.
fn fd(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    let d = |h: f64| (f(x + h) - f(x - h)) / (2.0 * h);
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

#[test]
fn jeffreys_gradient_matches_differences_on_50_by_3() {
    let mut r = rng(101);
    for _ in 0..20 {
        let x = random_design(&mut r, 50, 3, 2.0);
        let beta = DVector::from_fn(3, |_, _| r.random_range(-1.5..1.5));
        let pv = jeffreys_penalty(&x, &beta).unwrap();
        for s in 0..3 {
            let f = |v: f64| {
                let mut b = beta.clone();
                b[s] = v;
                jeffreys_penalty(&x, &b).unwrap().value
            };
            let numeric = fd(f, beta[s], 1e-3);
            assert!(relative_gap(pv.gradient[s], numeric) < 1e-6, "{} vs {numeric}", pv.gradient[s]);
            let bound = 1.5 * x.column(s).amax();
            assert!(pv.gradient[s].abs() <= bound + 1e-12);
        }
    }
}

#[test]
fn jeffreys_equivariance_constant() {
    let mut r = rng(102);
    for _ in 0..20 {
        let p = r.random_range(1..=5);
        let x = random_design(&mut r, 40, p, 1.5);
        let beta = DVector::from_fn(p, |_, _| r.random_range(-1.0..1.0));
        let c = loop {
            let c = DMatrix::<f64>::from_fn(p, p, |_, _| r.random_range(-2.0..2.0));
            if c.determinant().abs() > 0.1 {
                break c;
            }
        };
        let c_inv = c.clone().try_inverse().unwrap();
        let lhs = jeffreys_penalty(&(&x * &c_inv), &(&c * &beta)).unwrap().value;
        let rhs = jeffreys_penalty(&x, &beta).unwrap().value - c.determinant().abs().ln();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }
}

#[test]
fn composite_penalty_gradient_matches_differences() {
    let mut r = rng(103);
    for _ in 0..10 {
        let q = r.random_range(1..=3);
        let data = random_dataset(&mut r, 6, 3..=8, 3, q);
        let theta = random_theta(&mut r, 3, q, 1.5, (-2.5, 2.5));
        let pv = composite_penalty(&data, &theta).unwrap();
        let v = theta.to_vector();
        for j in 0..v.len() {
            let f = |t: f64| {
                let mut w = v.clone();
                w[j] = t;
                composite_penalty(&data, &Theta64::from_slice(w.as_slice(), 3).unwrap()).unwrap().value
            };
            // Keep the probes on one side of the Huber kinks at ±1.
            let h = if j >= 3 { 1e-4f64.min(0.5 * ((v[j].abs() - 1.0).abs())).max(1e-7) } else { 1e-3 };
            let numeric = fd(f, v[j], h);
            assert!(relative_gap(pv.gradient[j], numeric) < 1e-5, "coord {j}: {} vs {numeric}", pv.gradient[j]);
        }
    }
}

#[test]
fn composite_example_values() {
    let data = Dataset64::new(vec![mspl::Cluster64::new(
        vec![0, 1, 0, 1],
        DMatrix::from_element(4, 1, 1.0),
        DMatrix::from_element(4, 1, 1.0),
    )
    .unwrap()])
    .unwrap();
    let v = composite_penalty(&data, &Theta64::zeros(1, 1)).unwrap();
    assert_eq!(v.value, 0.0);
}

#[test]
fn culcita_composite_snapshot() {
    let data = culcita(true);
    let theta = Theta64::from_slice(&[8.05, -6.90, -7.87, -9.64, 1.72], 4).unwrap();
    let v = composite_penalty(&data, &theta).unwrap();
    assert!(v.value.is_finite());
    // Independent numpy evaluation of the same expression.
    assert!((v.value - CULCITA_PENALTY_SNAPSHOT).abs() < 1e-10, "{}", v.value);
}

const CULCITA_PENALTY_SNAPSHOT: f64 = -0.813376006409347;

#[test]
fn penalty_diverges_along_random_rays_while_loglik_stays_bounded() {
    let mut r = rng(104);
    let data = random_dataset(&mut r, 8, 3..=6, 2, 1);
    let eval = ApproxLikelihood::new(&data, Approximation::Agq(20)).unwrap();
    for _ in 0..20 {
        let dir = DVector::from_fn(3, |_, _| r.random_range(-1.0..1.0)).normalize();
        let at = |t: f64| Theta64::from_slice((&dir * t).as_slice(), 2).unwrap();
        let values: Vec<f64> = [5.0, 20.0, 80.0, 320.0].iter().map(|&t| composite_penalty(&data, &at(t)).unwrap().value).collect();
        assert!(values.windows(2).all(|w| w[1] < w[0]), "{values:?}");
        assert!(values[3] < -20.0, "{values:?}");
        for t in [5.0, 20.0, 80.0] {
            assert!(eval.loglik(&at(t)).unwrap() <= 1e-10);
        }
    }
}

#[test]
fn jeffreys_penalty_is_not_concave_in_general() {
    // Four rows, intercept and slope: the midpoint sits well below the chord.
    let x = DMatrix::from_row_slice(4, 2, &[1.0, -1.0, 1.0, -0.5, 1.0, 0.5, 1.0, 1.0]);
    let f = |b: [f64; 2]| jeffreys_penalty(&x, &DVector::from_row_slice(&b)).unwrap().value;
    let (a, b, mid) = (f([-4.0, -4.0]), f([-4.0, 4.0]), f([-4.0, 0.0]));
    // numpy slogdet values
    assert!((a - -2.376654290707348).abs() < 1e-12, "{a}");
    assert!((b - -2.37665429070735).abs() < 1e-12, "{b}");
    assert!((mid - -2.8850073093385964).abs() < 1e-12, "{mid}");
    assert!(mid < 0.5 * (a + b) - 0.5);
}

/// `½ log Σ_S det(X_S)² Π_{t∈S} w_t` over row pairs, in log space, with its gradient.
fn cauchy_binet(x: &DMatrix<f64>, beta: &DVector<f64>) -> (f64, DVector<f64>) {
    let eta = x * beta;
    let log_w: Vec<f64> = eta.iter().map(|&e| -e.abs() - 2.0 * ref_log1pexp(-e.abs())).collect();
    let dlog_w: Vec<f64> = eta.iter().map(|&e| 1.0 - 2.0 * ref_sigmoid(e)).collect();
    let mut terms = Vec::new();
    for a in 0..x.nrows() {
        for b in a + 1..x.nrows() {
            let det = x[(a, 0)] * x[(b, 1)] - x[(a, 1)] * x[(b, 0)];
            if det != 0.0 {
                let g = x.row(a).transpose() * dlog_w[a] + x.row(b).transpose() * dlog_w[b];
                terms.push((2.0 * det.abs().ln() + log_w[a] + log_w[b], g));
            }
        }
    }
    let max = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = terms.iter().map(|t| (t.0 - max).exp()).sum();
    let mut grad = DVector::zeros(2);
    for (l, g) in &terms {
        grad += g * ((l - max).exp() / total);
    }
    (0.5 * (max + total.ln()), grad * 0.5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn variance_gradient_is_clamped(psi in proptest::collection::vec(-50.0f64..50.0, 6)) {
        let v = variance_penalty(&psi, 3).unwrap();
        prop_assert!(v.gradient.iter().all(|g| (-1.0..=1.0).contains(g)));
        prop_assert!(v.gradient.norm() <= 6f64.sqrt() + 1e-12);
    }

    #[test]
    fn huber_is_concave(a in -5.0f64..5.0, b in -5.0f64..5.0) {
        prop_assert!(huber_d(0.5 * (a + b)) >= 0.5 * (huber_d(a) + huber_d(b)) - 1e-10);
    }

    #[test]
    fn jeffreys_gradient_bound_holds(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.random_range(5..=200);
        let p = r.random_range(1..=8usize.min(n));
        let scale = r.random_range(0.1..5.0);
        let x = random_design(&mut r, n, p, scale);
        let beta = DVector::from_fn(p, |_, _| r.random_range(-3.0..3.0));
        if let Ok(v) = jeffreys_penalty(&x, &beta) {
            for s in 0..p {
                let bound = p as f64 * x.column(s).amax();
                prop_assert!((2.0 * v.gradient[s]).abs() <= bound + 1e-12);
            }
        }
    }

    #[test]
    fn composite_gradient_norm_bound(seed in any::<u64>()) {
        let mut r = rng(seed);
        let q = r.random_range(1..=2);
        let data = random_dataset(&mut r, 5, 2..=7, 3, q);
        let theta = random_theta(&mut r, 3, q, 4.0, (-6.0, 6.0));
        let v = composite_penalty(&data, &theta).unwrap();
        let c = 2.0 * (3.0 / data.n() as f64).sqrt();
        let xmax = data.stacked_x().amax();
        let bound = c * 3f64.powf(1.5) * xmax / 2.0 + c * ((q * (q + 1) / 2) as f64).sqrt();
        prop_assert!(v.gradient.norm() <= bound + 1e-12);
    }

    #[test]
    fn variance_penalty_is_concave_on_segments(
        pa in proptest::collection::vec(-3.0f64..3.0, 3),
        pb in proptest::collection::vec(-3.0f64..3.0, 3),
    ) {
        let mid: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| 0.5 * (x + y)).collect();
        let g = |v: &[f64]| variance_penalty(v, 2).unwrap().value;
        prop_assert!(g(&mid) >= 0.5 * (g(&pa) + g(&pb)) - 1e-10);
    }

    #[test]
    fn jeffreys_matches_cauchy_binet_far_out(seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = random_design(&mut r, 9, 2, 1.5);
        let radius = r.random_range(1.0..400.0);
        let beta = DVector::from_fn(2, |_, _| r.random_range(-1.0..1.0)).normalize() * radius;
        let (value, grad) = cauchy_binet(&x, &beta);
        let v = jeffreys_penalty(&x, &beta).unwrap();
        prop_assert!((v.value - value).abs() < 1e-8 * (1.0 + value.abs()), "{} vs {value}", v.value);
        prop_assert!((&v.gradient - &grad).amax() < 1e-7, "{} vs {grad}", v.gradient);
    }
}

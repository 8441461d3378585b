//! BFGS minimizer with a backtracking Armijo line search (approximate Wolfe
//! once decreases drop below rounding), and a Nelder–Mead
//! simplex used to polish stalled runs.

use nalgebra::{DMatrix, DVector};

use crate::scalar::{lit, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    /// No Armijo point along the search direction, even after a reset.
    Stagnated,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct MinimizeOutcome<T: Real> {
    pub x: DVector<T>,
    pub value: T,
    pub gradient: DVector<T>,
    pub iterations: usize,
    pub reason: StopReason,
    /// Accepted function values, starting with the initial point.
    pub trace: Vec<T>,
}

pub trait Problem<T: Real> {
    /// Function value, `None` where evaluation fails.
    fn value(&mut self, x: &DVector<T>) -> Option<T>;
    fn gradient(&mut self, x: &DVector<T>) -> Option<DVector<T>>;
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 50;
const WOLFE_SIGMA: f64 = 0.9;
const WOLFE_DELTA: f64 = 0.1;

pub fn bfgs<T: Real, P: Problem<T>>(
    problem: &mut P,
    x0: DVector<T>,
    f0: T,
    g0: DVector<T>,
    grad_tol: T,
    max_iter: usize,
) -> MinimizeOutcome<T> {
    let n = x0.len();
    let mut x = x0;
    let mut f = f0;
    let mut g = g0;
    let mut h_inv = DMatrix::<T>::identity(n, n);
    let mut scaled = false;
    let mut trace = vec![f];

    for iteration in 0..max_iter {
        if g.norm() <= grad_tol {
            return MinimizeOutcome { x, value: f, gradient: g, iterations: iteration, reason: StopReason::Converged, trace };
        }

        let mut accepted = None;
        for attempt in 0..2 {
            let mut direction = -(&h_inv * &g);
            let mut slope = g.dot(&direction);
            if !(slope < T::zero()) || attempt == 1 {
                h_inv = DMatrix::identity(n, n);
                scaled = false;
                direction = -g.clone();
                slope = g.dot(&direction);
            }
            let mut alpha = if scaled { T::one() } else { T::one().min(T::one() / g.norm()) };
            for _ in 0..MAX_BACKTRACKS {
                let candidate = &x + &direction * alpha;
                if let Some(fc) = problem.value(&candidate).filter(|v| v.is_finite()) {
                    let threshold = f + lit::<T>(ARMIJO_C1) * alpha * slope;
                    if threshold < f {
                        if fc <= threshold {
                            accepted = Some((candidate, fc, None));
                            break;
                        }
                    } else if fc <= f {
                        // The required decrease is below the rounding of f, so
                        // judge the step by the slope at the candidate instead
                        // (approximate Wolfe conditions).
                        if let Some(gc) = problem.gradient(&candidate) {
                            let dc = gc.dot(&direction);
                            if dc >= lit::<T>(WOLFE_SIGMA) * slope && dc <= lit::<T>(2.0 * WOLFE_DELTA - 1.0) * slope {
                                accepted = Some((candidate, fc, Some(gc)));
                                break;
                            }
                        }
                    }
                }
                alpha *= lit(0.5);
            }
            if accepted.is_some() {
                break;
            }
        }

        let Some((x_new, f_new, g_known)) = accepted else {
            return MinimizeOutcome { x, value: f, gradient: g, iterations: iteration, reason: StopReason::Stagnated, trace };
        };
        let Some(g_new) = g_known.or_else(|| problem.gradient(&x_new)) else {
            return MinimizeOutcome { x, value: f, gradient: g, iterations: iteration, reason: StopReason::Stagnated, trace };
        };

        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > T::eps().sqrt() * s.norm() * y.norm() {
            if !scaled {
                h_inv = DMatrix::identity(n, n) * (sy / y.dot(&y));
                scaled = true;
            }
            let rho = T::one() / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            // H ← H + ρ²(sᵀy + yᵀHy) ssᵀ − ρ(Hy sᵀ + s yᵀH)
            h_inv += (&s * s.transpose()) * (rho * rho * (sy + yhy));
            h_inv -= (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        x = x_new;
        f = f_new;
        g = g_new;
        trace.push(f);
    }

    let reason = if g.norm() <= grad_tol { StopReason::Converged } else { StopReason::MaxIterations };
    MinimizeOutcome { x, value: f, gradient: g, iterations: max_iter, reason, trace }
}

/// Nelder–Mead minimization from `x0`; returns the best vertex and its value.
/// The best value never increases across iterations.
pub fn nelder_mead<T: Real, P: Problem<T>>(problem: &mut P, x0: &DVector<T>, f0: T, max_evals: usize) -> (DVector<T>, T) {
    let n = x0.len();
    let mut simplex: Vec<(DVector<T>, T)> = vec![(x0.clone(), f0)];
    for i in 0..n {
        let mut v = x0.clone();
        v[i] += lit::<T>(0.1) * x0[i].abs().max(T::one());
        let fv = problem.value(&v).filter(|f| f.is_finite()).unwrap_or(T::max_value().unwrap_or(T::one()));
        simplex.push((v, fv));
    }
    let big = T::max_value().unwrap_or(T::one());
    let eval = |p: &mut P, v: &DVector<T>| p.value(v).filter(|f| f.is_finite()).unwrap_or(big);
    let (alpha, gamma, rho, sigma) = (T::one(), lit::<T>(2.0), lit::<T>(0.5), lit::<T>(0.5));
    let mut evals = n;

    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let size = simplex[1..]
            .iter()
            .map(|(v, _)| (v - &simplex[0].0).amax())
            .fold(T::zero(), |a, b| a.max(b));
        if (worst - best).abs() <= lit::<T>(1e-13) * (T::one() + best.abs()) && size <= lit(1e-9) {
            break;
        }
        let centroid = simplex[..n].iter().fold(DVector::zeros(n), |acc, (v, _)| acc + v) / lit::<T>(n as f64);
        let reflected = &centroid + (&centroid - &simplex[n].0) * alpha;
        let fr = eval(problem, &reflected);
        evals += 1;
        if fr < simplex[0].1 {
            let expanded = &centroid + (&reflected - &centroid) * gamma;
            let fe = eval(problem, &expanded);
            evals += 1;
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
        } else {
            let contracted = &centroid + (&simplex[n].0 - &centroid) * rho;
            let fc = eval(problem, &contracted);
            evals += 1;
            if fc < simplex[n].1 {
                simplex[n] = (contracted, fc);
            } else {
                let anchor = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let v = &anchor + (&vertex.0 - &anchor) * sigma;
                    let fv = eval(problem, &v);
                    *vertex = (v, fv);
                }
                evals += n;
            }
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    let (x, f) = simplex.swap_remove(0);
    if f <= f0 {
        (x, f)
    } else {
        (x0.clone(), f0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    struct Rosenbrock;

    impl Problem<f64> for Rosenbrock {
        fn value(&mut self, x: &DVector<f64>) -> Option<f64> {
            Some((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2))
        }
        fn gradient(&mut self, x: &DVector<f64>) -> Option<DVector<f64>> {
            Some(dvector![
                -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]),
                200.0 * (x[1] - x[0] * x[0])
            ])
        }
    }

    #[test]
    fn bfgs_solves_rosenbrock_monotonically() {
        let x0 = dvector![-1.2, 1.0];
        let mut p = Rosenbrock;
        let f0 = p.value(&x0).unwrap();
        let g0 = p.gradient(&x0).unwrap();
        let out = bfgs(&mut p, x0, f0, g0, 1e-9, 500);
        assert_eq!(out.reason, StopReason::Converged);
        assert!((out.x - dvector![1.0, 1.0]).norm() < 1e-6);
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn nelder_mead_improves() {
        let mut p = Rosenbrock;
        let x0 = dvector![0.5, 0.5];
        let f0 = p.value(&x0).unwrap();
        let (x, f) = nelder_mead(&mut p, &x0, f0, 4000);
        assert!(f < 1e-8, "{f} at {x}");
    }
}

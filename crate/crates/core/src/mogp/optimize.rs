//! Bounded L-BFGS minimizer used for hyperparameter fitting.
//!
//! Non-finite objective values are treated as infeasible and trigger
//! backtracking, which keeps the search away from numerically singular
//! covariance settings without explicit constraints.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsSettings {
    pub max_iters: usize,
    pub memory: usize,
    pub grad_tol: f64,
    pub f_rel_tol: f64,
}

impl Default for LbfgsSettings {
    fn default() -> Self {
        Self {
            max_iters: 100,
            memory: 8,
            grad_tol: 1e-5,
            f_rel_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn project(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(lo, hi);
    }
}

/// Minimize `f` starting at `x0`. `f` returns `(value, gradient)`; a
/// non-finite value marks the point infeasible.
pub fn minimize<F>(mut f: F, x0: &[f64], bounds: &[(f64, f64)], s: &LbfgsSettings) -> Minimum
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, bounds);
    let (mut fx, mut g) = f(&x);
    let mut evals = 1;
    if !fx.is_finite() {
        return Minimum {
            x,
            f: fx,
            iterations: 0,
            evaluations: evals,
            converged: false,
        };
    }
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut converged = false;
    let mut iters = 0;

    while iters < s.max_iters {
        iters += 1;
        // projected gradient: ignore components pinned at an active bound
        let pg: Vec<f64> = (0..n)
            .map(|i| {
                let (lo, hi) = bounds[i];
                if (x[i] <= lo && g[i] > 0.0) || (x[i] >= hi && g[i] < 0.0) {
                    0.0
                } else {
                    g[i]
                }
            })
            .collect();
        if pg.iter().fold(0.0f64, |m, v| m.max(v.abs())) < s.grad_tol * (1.0 + fx.abs()) {
            converged = true;
            break;
        }

        // two-loop recursion
        let mut q = pg.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (sv, yv, rho) in hist.iter().rev() {
            let a = rho * dot(sv, &q);
            for i in 0..n {
                q[i] -= a * yv[i];
            }
            alphas.push(a);
        }
        if let Some((sv, yv, _)) = hist.back() {
            let gamma = dot(sv, yv) / dot(yv, yv);
            q.iter_mut().for_each(|v| *v *= gamma);
        } else {
            let gn = dot(&pg, &pg).sqrt();
            q.iter_mut().for_each(|v| *v /= gn.max(1.0));
        }
        for ((sv, yv, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(yv, &q);
            for i in 0..n {
                q[i] += sv[i] * (a - b);
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&dir, &pg);
        if !(slope < 0.0) {
            hist.clear();
            dir = pg.iter().map(|v| -v).collect();
            slope = -dot(&pg, &pg);
        }

        // backtracking Armijo line search on the projected path
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut xn: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            project(&mut xn, bounds);
            let (fn_, gn) = f(&xn);
            evals += 1;
            if fn_.is_finite() && fn_ <= fx + 1e-4 * step * slope {
                accepted = Some((xn, fn_, gn));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            if hist.is_empty() {
                break;
            }
            hist.clear();
            continue;
        };

        let sv: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&sv, &yv);
        if sy > 1e-12 * dot(&yv, &yv).sqrt() * dot(&sv, &sv).sqrt() {
            hist.push_back((sv, yv, 1.0 / sy));
            if hist.len() > s.memory {
                hist.pop_front();
            }
        }
        let rel = (fx - fn_).abs() / (1.0 + fx.abs());
        x = xn;
        fx = fn_;
        g = gn;
        if rel < s.f_rel_tol {
            converged = true;
            break;
        }
    }

    Minimum {
        x,
        f: fx,
        iterations: iters,
        evaluations: evals,
        converged,
    }
}

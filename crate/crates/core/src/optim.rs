//! Newton's method on an unconstrained parameter space with a
//! finite-difference Hessian and Armijo backtracking, falling back to
//! gradient steps whenever the Hessian is not negative definite.

use nalgebra::{DMatrix, DVector};

use crate::numerics::{fd_gradient, fd_hessian};

#[derive(Debug, Clone)]
pub struct Options {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub rel_tol: f64,
    pub armijo_c: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            max_iters: 200,
            grad_tol: 1e-6,
            rel_tol: 1e-10,
            armijo_c: 1e-4,
            backtrack: 0.5,
            max_backtracks: 60,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MaxResult {
    pub theta: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
}

/// Maximize `f` starting from `theta0`. `f` must be finite at the start
/// and may return `-inf` at infeasible points; those are simply rejected
/// by the line search.
pub fn maximize<F: Fn(&[f64]) -> f64>(f: F, theta0: &[f64], opts: &Options) -> MaxResult {
    let mut theta = theta0.to_vec();
    let mut value = f(&theta);
    let mut grad_norm = f64::INFINITY;
    if !value.is_finite() {
        return MaxResult { theta, value, converged: false, iterations: 0, grad_norm };
    }

    for iter in 0..opts.max_iters {
        let grad = match fd_gradient(&f, &theta) {
            Ok(g) => g,
            Err(_) => {
                return MaxResult { theta, value, converged: false, iterations: iter, grad_norm }
            }
        };
        grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if grad_norm <= opts.grad_tol {
            return MaxResult { theta, value, converged: true, iterations: iter, grad_norm };
        }

        let g = DVector::from_column_slice(&grad);
        let direction = newton_direction(&f, &theta, &g).unwrap_or_else(|| g.clone());
        // Ascent check: fall back to the raw gradient if Newton points downhill.
        let dir = if direction.dot(&g) > 0.0 { direction } else { g.clone() };

        let slope = dir.dot(&g);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..opts.max_backtracks {
            let trial: Vec<f64> =
                theta.iter().zip(dir.iter()).map(|(t, d)| t + step * d).collect();
            let trial_value = f(&trial);
            if trial_value.is_finite() && trial_value >= value + opts.armijo_c * step * slope {
                let rel_change = (trial_value - value).abs() / value.abs().max(1.0);
                theta = trial;
                let small = rel_change <= opts.rel_tol;
                value = trial_value;
                accepted = true;
                if small {
                    // Stalled objective: report convergence only when the
                    // gradient is also at tolerance.
                    let g2 = fd_gradient(&f, &theta)
                        .map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt())
                        .unwrap_or(grad_norm);
                    return MaxResult {
                        theta,
                        value,
                        converged: g2 <= opts.grad_tol.max(1e-5),
                        iterations: iter + 1,
                        grad_norm: g2,
                    };
                }
                break;
            }
            step *= opts.backtrack;
        }
        if !accepted {
            // No uphill step along either direction.
            return MaxResult { theta, value, converged: grad_norm <= opts.grad_tol, iterations: iter, grad_norm };
        }
    }

    let final_grad = fd_gradient(&f, &theta)
        .map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt())
        .unwrap_or(grad_norm);
    MaxResult {
        theta,
        value,
        converged: final_grad <= opts.grad_tol,
        iterations: opts.max_iters,
        grad_norm: final_grad,
    }
}

fn newton_direction<F: Fn(&[f64]) -> f64>(
    f: &F,
    theta: &[f64],
    grad: &DVector<f64>,
) -> Option<DVector<f64>> {
    let hess = fd_hessian(f, theta).ok()?;
    let n = theta.len();
    let h = DMatrix::from_fn(n, n, |i, j| hess[i][j]);
    // Newton step for a maximum: d = (-H)^{-1} g, valid when -H is PD.
    let neg_h = -h;
    let chol = neg_h.cholesky()?;
    Some(chol.solve(grad))
}

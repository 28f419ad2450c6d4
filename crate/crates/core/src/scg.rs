//! Scaled conjugate gradients (Møller, 1993).
//!
//! Curvature along the search direction is estimated from a gradient
//! difference over a tiny step, and a Levenberg-Marquardt style scale `λ`
//! keeps the local quadratic model positive definite. The step length comes
//! from the model directly, so no line search is run: each iteration costs
//! one objective evaluation and at most two gradient evaluations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScgConfig {
    pub max_iters: usize,
    /// Stop once `‖g‖∞` falls below this.
    pub grad_tol: f64,
    /// Stop once an accepted step moves every coordinate by less than this.
    pub step_tol: f64,
    pub initial_lambda: f64,
}

impl Default for ScgConfig {
    fn default() -> Self {
        ScgConfig {
            max_iters: 100,
            grad_tol: 1e-8,
            step_tol: 1e-12,
            initial_lambda: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    GradTol,
    StepTol,
    MaxIters,
}

#[derive(Clone, Debug)]
pub struct ScgResult {
    pub x_star: Vec<f64>,
    pub f_star: f64,
    pub iterations_used: usize,
    pub converged_by: StopReason,
    /// Objective value held after each iteration, starting with `f(x0)`.
    pub trace: Vec<f64>,
    pub f_evals: usize,
    pub g_evals: usize,
}

/// The objective or its gradient stopped being finite.
#[derive(Debug, Error)]
#[error("scaled conjugate gradients aborted after {} iterations: {reason}", last_finite.iterations_used)]
pub struct ScgAbort {
    pub last_finite: ScgResult,
    pub reason: String,
}

const SIGMA0: f64 = 1e-4;
const LAMBDA_MIN: f64 = 1e-15;
const LAMBDA_MAX: f64 = 1e15;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Minimizes `f` starting from `x0`. The iterate sequence never increases
/// `f`: trial points that do not decrease it are rejected and `λ` grows.
pub fn scg_minimize<F, G>(mut f: F, mut g: G, x0: &[f64], cfg: &ScgConfig) -> Result<ScgResult, ScgAbort>
where
    F: FnMut(&[f64]) -> f64,
    G: FnMut(&[f64]) -> Vec<f64>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut f_evals = 1;
    let mut g_evals = 1;
    let mut f_old = f(&x);
    let mut grad = g(&x);

    let result = |x: &[f64], fv: f64, it: usize, why: StopReason, trace: &[f64], fe: usize, ge: usize| ScgResult {
        x_star: x.to_vec(),
        f_star: fv,
        iterations_used: it,
        converged_by: why,
        trace: trace.to_vec(),
        f_evals: fe,
        g_evals: ge,
    };

    if !f_old.is_finite() || grad.iter().any(|v| !v.is_finite()) || grad.len() != n {
        return Err(ScgAbort {
            last_finite: result(&x, f_old, 0, StopReason::MaxIters, &[], f_evals, g_evals),
            reason: "objective or gradient not finite at the starting point".into(),
        });
    }

    let mut trace = vec![f_old];
    if inf_norm(&grad) < cfg.grad_tol {
        return Ok(result(&x, f_old, 0, StopReason::GradTol, &trace, f_evals, g_evals));
    }

    let mut d: Vec<f64> = grad.iter().map(|v| -v).collect();
    let mut lambda = cfg.initial_lambda.clamp(LAMBDA_MIN, LAMBDA_MAX);
    let mut success = true;
    let mut n_success = 0usize;
    let (mut mu, mut kappa, mut theta) = (0.0, 0.0, 0.0);

    for it in 1..=cfg.max_iters {
        if success {
            mu = dot(&d, &grad);
            if mu >= 0.0 {
                d = grad.iter().map(|v| -v).collect();
                mu = dot(&d, &grad);
            }
            kappa = dot(&d, &d);
            if kappa < f64::EPSILON * f64::EPSILON {
                return Ok(result(&x, f_old, it - 1, StopReason::GradTol, &trace, f_evals, g_evals));
            }
            let sigma = SIGMA0 / kappa.sqrt();
            let x_plus: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + sigma * b).collect();
            let g_plus = g(&x_plus);
            g_evals += 1;
            if g_plus.iter().any(|v| !v.is_finite()) {
                return Err(ScgAbort {
                    last_finite: result(&x, f_old, it - 1, StopReason::MaxIters, &trace, f_evals, g_evals),
                    reason: "gradient not finite at curvature probe".into(),
                });
            }
            theta = d.iter().zip(g_plus.iter().zip(&grad)).map(|(di, (gp, g0))| di * (gp - g0)).sum::<f64>() / sigma;
        }

        // Scale the curvature so the quadratic model is positive definite.
        let mut delta = theta + lambda * kappa;
        if delta <= 0.0 {
            delta = lambda * kappa;
            lambda -= theta / kappa;
        }
        let alpha = -mu / delta;

        let x_new: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
        let f_new = f(&x_new);
        f_evals += 1;

        // Comparison parameter: ratio of actual to predicted decrease.
        let comparison = if f_new.is_finite() {
            2.0 * (f_new - f_old) / (alpha * mu)
        } else {
            f64::NEG_INFINITY
        };

        if comparison >= 0.0 && f_new <= f_old {
            success = true;
            n_success += 1;
            let max_step = x_new.iter().zip(&x).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            x = x_new;
            f_old = f_new;
            let grad_old = std::mem::replace(&mut grad, g(&x));
            g_evals += 1;
            if grad.iter().any(|v| !v.is_finite()) {
                return Err(ScgAbort {
                    last_finite: result(&x, f_old, it, StopReason::MaxIters, &trace, f_evals, g_evals),
                    reason: "gradient not finite at accepted point".into(),
                });
            }
            trace.push(f_old);
            if inf_norm(&grad) < cfg.grad_tol {
                return Ok(result(&x, f_old, it, StopReason::GradTol, &trace, f_evals, g_evals));
            }
            if max_step < cfg.step_tol {
                return Ok(result(&x, f_old, it, StopReason::StepTol, &trace, f_evals, g_evals));
            }
            if n_success >= n {
                d = grad.iter().map(|v| -v).collect();
                n_success = 0;
            } else {
                let gamma = grad_old.iter().zip(&grad).map(|(a, b)| (a - b) * b).sum::<f64>() / mu;
                d = d.iter().zip(&grad).map(|(di, gi)| gamma * di - gi).collect();
            }
        } else {
            success = false;
            trace.push(f_old);
        }

        if comparison < 0.25 {
            lambda = (4.0 * lambda).min(LAMBDA_MAX);
        } else if comparison > 0.75 {
            lambda = (0.5 * lambda).max(LAMBDA_MIN);
        }
        if !success && lambda >= LAMBDA_MAX {
            // No step can make progress any more.
            return Ok(result(&x, f_old, it, StopReason::StepTol, &trace, f_evals, g_evals));
        }
    }

    Ok(result(&x, f_old, cfg.max_iters, StopReason::MaxIters, &trace, f_evals, g_evals))
}

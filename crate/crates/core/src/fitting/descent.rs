//! Gradient descent with step halving on rejected steps.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DescentConfig {
    pub iters: usize,
    /// Initial step size.
    pub lr: f64,
    /// Factor applied to the step after an accepted move.
    pub grow: f64,
    /// Upper bound on the step size.
    pub max_step: f64,
    /// Halvings tried per iteration before giving up.
    pub max_halvings: usize,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self {
            iters: 500,
            lr: 1e-2,
            grow: 1.5,
            max_step: f64::INFINITY,
            max_halvings: 40,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DescentResult {
    pub x: Vec<f64>,
    pub loss: f64,
    /// Loss after every iteration; non-increasing.
    pub trace: Vec<f64>,
}

/// Minimizes from `x0` along the negative gradient. `eval` returns the
/// loss and gradient, `project` maps a candidate back into the feasible
/// set and `feasible` rejects candidates outright.
pub fn minimize(
    x0: Vec<f64>,
    cfg: &DescentConfig,
    eval: impl FnMut(&[f64]) -> (f64, Vec<f64>),
    project: impl Fn(&mut [f64]),
    feasible: impl Fn(&[f64]) -> bool,
) -> Result<DescentResult> {
    minimize_along(x0, cfg, eval, |_, g| g.to_vec(), project, feasible)
}

/// As [`minimize`], stepping along `direction(x, grad)` (a descent
/// direction, e.g. a preconditioned gradient) instead of the gradient.
pub fn minimize_along(
    x0: Vec<f64>,
    cfg: &DescentConfig,
    mut eval: impl FnMut(&[f64]) -> (f64, Vec<f64>),
    mut direction: impl FnMut(&[f64], &[f64]) -> Vec<f64>,
    project: impl Fn(&mut [f64]),
    feasible: impl Fn(&[f64]) -> bool,
) -> Result<DescentResult> {
    if !(cfg.lr > 0.0) || cfg.max_halvings == 0 {
        return Err(Error::InvalidConfig("descent needs lr > 0 and max_halvings > 0".into()));
    }
    let mut x = x0;
    project(&mut x);
    let (mut loss, mut grad) = eval(&x);
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NumericFailure {
            t: 0,
            msg: format!("non-finite loss {loss} at the initial point"),
        });
    }
    let mut step = cfg.lr.min(cfg.max_step);
    let mut trace = Vec::with_capacity(cfg.iters);
    for _ in 0..cfg.iters {
        let mut moved = false;
        let dir = direction(&x, &grad);
        for _ in 0..cfg.max_halvings {
            let mut cand: Vec<f64> = x.iter().zip(&dir).map(|(v, d)| v - step * d).collect();
            project(&mut cand);
            if feasible(&cand) {
                let (l, g) = eval(&cand);
                if l.is_finite() && l < loss && g.iter().all(|v| v.is_finite()) {
                    x = cand;
                    loss = l;
                    grad = g;
                    step = (step * cfg.grow).min(cfg.max_step);
                    moved = true;
                    break;
                }
            }
            step *= 0.5;
        }
        trace.push(loss);
        if !moved {
            break;
        }
    }
    Ok(DescentResult { x, loss, trace })
}

/// Solves `a x = b` for symmetric positive definite `a` (row-major
/// `n x n`) by Cholesky factorization; `None` if `a` is not positive
/// definite.
pub fn solve_spd(a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i * n + k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k * n + i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i * n + i];
    }
    Some(x)
}

/// Gauss-Newton direction for a least-squares loss `sum r^2 + sum w x^2`
/// whose residual Jacobian `jac` is `m x n` row-major: solves
/// `(2 J^T J + 2 diag(w) + damping I) d = grad`. Falls back to the
/// gradient when the system is singular.
pub fn gauss_newton_direction(jac: &[f64], n: usize, prior: &[f64], damping: f64, grad: &[f64]) -> Vec<f64> {
    let m = jac.len() / n;
    let mut a = vec![0.0; n * n];
    for r in 0..m {
        let row = &jac[r * n..(r + 1) * n];
        for i in 0..n {
            if row[i] == 0.0 {
                continue;
            }
            for j in 0..n {
                a[i * n + j] += 2.0 * row[i] * row[j];
            }
        }
    }
    for i in 0..n {
        a[i * n + i] += 2.0 * prior[i] + damping;
    }
    solve_spd(&a, grad).unwrap_or_else(|| grad.to_vec())
}

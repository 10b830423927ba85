//! Recovering body pose and shape from target points.

use super::ad::{value_and_gradient, Var};
use super::descent::{gauss_newton_direction, minimize_along, DescentConfig};
use crate::error::{invalid_arg, Result};
use crate::geometry::PointCloud;
use crate::math::{Real, V3};
use crate::synthdata::{ArticulatedBody, BodyParams, SHAPE_DIMS};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitBodyConfig {
    pub lambda_theta: f64,
    /// Weight of the pull of the shape multipliers toward 1.
    pub lambda_beta: f64,
    pub descent: DescentConfig,
}

impl Default for FitBodyConfig {
    fn default() -> Self {
        Self {
            lambda_theta: 1e-4,
            lambda_beta: 1e-4,
            descent: DescentConfig {
                iters: 200,
                lr: 1.0,
                grow: 2.0,
                max_step: 1.0,
                ..Default::default()
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct BodyFit {
    pub params: BodyParams,
    pub loss: f64,
    /// Squared-distance term alone at the returned parameters.
    pub data_loss: f64,
    pub trace: Vec<f64>,
}

/// `(data, total)` of the fitting objective at flattened parameters `x`.
pub fn body_objective<T: Real>(
    body: &ArticulatedBody,
    x: &[T],
    targets: &PointCloud,
    subset: &[usize],
    cfg: &FitBodyConfig,
) -> (T, T) {
    let nj = body.joint_count() - 1;
    let theta: Vec<V3<T>> = (0..nj).map(|j| V3::new(x[3 * j], x[3 * j + 1], x[3 * j + 2])).collect();
    let b0 = 3 * nj;
    let beta = &x[b0..b0 + SHAPE_DIMS];
    let r = V3::new(x[b0 + SHAPE_DIMS], x[b0 + SHAPE_DIMS + 1], x[b0 + SHAPE_DIMS + 2]);
    let t = V3::new(x[b0 + SHAPE_DIMS + 3], x[b0 + SHAPE_DIMS + 4], x[b0 + SHAPE_DIMS + 5]);
    let verts = body.vertices(&theta, beta, r, t);
    let mut data = T::zero();
    for &i in subset {
        data = data + (verts[i] - V3::lift(targets.points()[i])).norm_squared();
    }
    let mut prior_t = T::zero();
    for v in &x[..b0] {
        prior_t = prior_t + v.square();
    }
    let mut prior_b = T::zero();
    for b in beta {
        prior_b = prior_b + (*b + -1.0).square();
    }
    (data, data + prior_t * cfg.lambda_theta + prior_b * cfg.lambda_beta)
}

pub fn body_loss_and_gradient(
    body: &ArticulatedBody,
    params: &BodyParams,
    targets: &PointCloud,
    subset: &[usize],
    cfg: &FitBodyConfig,
) -> (f64, Vec<f64>) {
    value_and_gradient(&params.to_vec(), |x: &[Var]| body_objective(body, x, targets, subset, cfg).1)
}

fn subset_vertices(body: &ArticulatedBody, x: &[f64], subset: &[usize]) -> Vec<f64> {
    let p = BodyParams::from_slice(body, x);
    let v = body.vertices(&p.theta, &p.beta, p.r_global, p.t_global);
    subset.iter().flat_map(|&i| v[i].to_array()).collect()
}

/// Central-difference Jacobian of the data residuals with respect to the
/// parameters in `cols`, `3|S| x |cols|`.
fn residual_jacobian(body: &ArticulatedBody, x: &[f64], subset: &[usize], cols: &[usize]) -> Vec<f64> {
    let n = cols.len();
    let m = 3 * subset.len();
    let h = 1e-6;
    let mut jac = vec![0.0; m * n];
    let mut xp = x.to_vec();
    for (c, &i) in cols.iter().enumerate() {
        xp[i] = x[i] + h;
        let up = subset_vertices(body, &xp, subset);
        xp[i] = x[i] - h;
        let down = subset_vertices(body, &xp, subset);
        xp[i] = x[i];
        for r in 0..m {
            jac[r * n + c] = (up[r] - down[r]) / (2.0 * h);
        }
    }
    jac
}

/// Fits `body` to `targets` (aligned with the canonical point order) on
/// the points in `subset`, starting from `init` or from the rest pose
/// moved onto the target centroid. The global rotation is held at its
/// starting value; see [`BodyParams::regauged`]. Steps follow the Gauss-Newton
/// direction of the objective and are halved until the loss decreases.
pub fn fit_body(
    body: &ArticulatedBody,
    targets: &PointCloud,
    subset: &[usize],
    cfg: &FitBodyConfig,
    init: Option<&BodyParams>,
) -> Result<BodyFit> {
    if targets.len() != body.n_points() {
        return Err(invalid_arg(format!(
            "{} targets for a {}-point body",
            targets.len(),
            body.n_points()
        )));
    }
    if subset.is_empty() || subset.iter().any(|&i| i >= targets.len()) {
        return Err(invalid_arg("fit subset is empty or out of range"));
    }
    if !(cfg.lambda_theta >= 0.0 && cfg.lambda_beta >= 0.0) {
        return Err(invalid_arg("prior weights must be non-negative"));
    }
    let start = match init {
        Some(p) => p.clone(),
        None => {
            let rest = BodyParams::zero(body);
            let verts = body.vertices(&rest.theta, &rest.beta, rest.r_global, rest.t_global);
            let n = subset.len() as f64;
            let mut shift = V3::zeros();
            for &i in subset {
                shift += targets.points()[i] - verts[i];
            }
            BodyParams {
                t_global: shift * (1.0 / n),
                ..rest
            }
        }
    };
    // The global rotation duplicates the rotations of the root's children
    // (the root has no surface points of its own), so it stays at its
    // starting value and only the remaining parameters move.
    let nj = body.joint_count() - 1;
    let full0 = start.to_vec();
    let r0 = 3 * nj + SHAPE_DIMS;
    let free: Vec<usize> = (0..full0.len()).filter(|&i| !(r0..r0 + 3).contains(&i)).collect();
    let expand = |x: &[f64]| {
        let mut full = full0.clone();
        for (k, &i) in free.iter().enumerate() {
            full[i] = x[k];
        }
        full
    };
    let mut prior = vec![cfg.lambda_theta; 3 * nj];
    prior.extend([cfg.lambda_beta; SHAPE_DIMS]);
    prior.extend([0.0; 3]);
    let res = minimize_along(
        free.iter().map(|&i| full0[i]).collect(),
        &cfg.descent,
        |x| {
            let (l, g) = value_and_gradient(&expand(x), |v: &[Var]| body_objective(body, v, targets, subset, cfg).1);
            (l, free.iter().map(|&i| g[i]).collect())
        },
        |x, g| {
            let jac = residual_jacobian(body, &expand(x), subset, &free);
            gauss_newton_direction(&jac, x.len(), &prior, 1e-9, g)
        },
        |_| {},
        |x| x[3 * nj..3 * nj + SHAPE_DIMS].iter().all(|b| *b > 0.0),
    )?;
    let full = expand(&res.x);
    let (data_loss, _) = body_objective(body, &full, targets, subset, cfg);
    Ok(BodyFit {
        params: BodyParams::from_slice(body, &full),
        loss: res.loss,
        data_loss,
        trace: res.trace,
    })
}

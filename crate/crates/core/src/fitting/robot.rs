//! Serial-chain robot kinematics and matching robot affordance scores to
//! human ones through a correspondence map.

use std::cell::RefCell;

use super::descent::{gauss_newton_direction, minimize_along, DescentConfig};
use crate::affordance::{AffordanceBundle, HoiSampleSet, DEGENERATE_CROSS};
use crate::error::{invalid_arg, Error, Result};
use crate::geometry::{make_sphere_bins, FrameTag, PointCloud, SphereBins};
use crate::math::{Mat3, Real, Vec3, V3};
use crate::model::Tensor;

/// Planar serial chain: every joint turns about z, links start along +x.
#[derive(Clone, Debug, PartialEq)]
pub struct RobotModel {
    /// `(length, radius)` per link.
    pub links: Vec<(f64, f64)>,
    pub joint_limits: Vec<(f64, f64)>,
    /// Surface points per link.
    pub surface_samples: usize,
}

impl RobotModel {
    pub fn new(links: Vec<(f64, f64)>, joint_limits: Vec<(f64, f64)>, surface_samples: usize) -> Result<Self> {
        if links.len() < 2 || joint_limits.len() != links.len() {
            return Err(Error::InvalidConfig(format!(
                "chain needs >= 2 links and one limit per joint, got {} links and {} limits",
                links.len(),
                joint_limits.len()
            )));
        }
        if joint_limits.iter().any(|&(lo, hi)| !(lo < hi)) {
            return Err(Error::InvalidConfig("joint limits must satisfy lo < hi".into()));
        }
        if links.iter().any(|&(l, r)| !(l > 0.0 && r >= 0.0)) || surface_samples == 0 {
            return Err(Error::InvalidConfig("links need positive length and at least one sample".into()));
        }
        Ok(Self {
            links,
            joint_limits,
            surface_samples,
        })
    }

    /// Three-link planar arm with +-150 degree joints.
    pub fn planar_3dof() -> Self {
        let lim = 150f64.to_radians();
        Self::new(vec![(0.30, 0.03), (0.25, 0.025), (0.15, 0.02)], vec![(-lim, lim); 3], 8)
            .expect("valid preset")
    }

    pub fn dof(&self) -> usize {
        self.links.len()
    }

    pub fn n_points(&self) -> usize {
        self.dof() * self.surface_samples
    }

    pub fn within_limits(&self, phi: &[f64]) -> bool {
        phi.len() == self.dof() && phi.iter().zip(&self.joint_limits).all(|(p, &(lo, hi))| *p >= lo && *p <= hi)
    }

    pub fn clamp(&self, phi: &mut [f64]) {
        for (p, &(lo, hi)) in phi.iter_mut().zip(&self.joint_limits) {
            *p = p.clamp(lo, hi);
        }
    }

    /// Joint positions (base first, tip last) in the chain frame.
    pub fn joint_positions<T: Real>(&self, phi: &[T]) -> Vec<V3<T>> {
        let mut out = vec![V3::zeros()];
        let mut angle = T::zero();
        for (k, &(len, _)) in self.links.iter().enumerate() {
            angle = angle + phi[k];
            let prev = out[k];
            out.push(prev + V3::new(angle.cos(), angle.sin(), T::zero()) * len);
        }
        out
    }

    /// Surface points in the chain frame, link-major.
    pub fn surface<T: Real>(&self, phi: &[T]) -> Vec<V3<T>> {
        let joints = self.joint_positions(phi);
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let n = self.surface_samples;
        let mut out = Vec::with_capacity(self.n_points());
        let mut angle = T::zero();
        for (k, &(len, radius)) in self.links.iter().enumerate() {
            angle = angle + phi[k];
            let (c, s) = (angle.cos(), angle.sin());
            let along = V3::new(c, s, T::zero());
            let normal = V3::new(-s, c, T::zero());
            for i in 0..n {
                let u = (i as f64 + 0.5) / n as f64;
                let psi = golden * i as f64;
                let ring = normal * (radius * psi.cos()) + V3::new(T::zero(), T::zero(), T::cst(radius * psi.sin()));
                out.push(joints[k] + along * (u * len) + ring);
            }
        }
        out
    }
}

/// Joint angles plus the rigid placement of the chain base.
#[derive(Clone, Debug, PartialEq)]
pub struct RobotPose {
    pub phi: Vec<f64>,
    pub r: Vec3,
    pub t: Vec3,
}

impl RobotPose {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.phi.clone();
        v.extend(self.r.to_array());
        v.extend(self.t.to_array());
        v
    }

    pub fn from_slice(dof: usize, v: &[f64]) -> Self {
        Self {
            phi: v[..dof].to_vec(),
            r: Vec3::new(v[dof], v[dof + 1], v[dof + 2]),
            t: Vec3::new(v[dof + 3], v[dof + 4], v[dof + 5]),
        }
    }
}

fn aligned<T: Real>(model: &RobotModel, x: &[T]) -> Vec<V3<T>> {
    let dof = model.dof();
    let rot = Mat3::exp_so3(V3::new(x[dof], x[dof + 1], x[dof + 2]));
    let t = V3::new(x[dof + 3], x[dof + 4], x[dof + 5]);
    model.surface(&x[..dof]).into_iter().map(|p| rot.mul_vec(p) + t).collect()
}

/// Surface points of the chain at `pose`, rigidly placed.
pub fn robot_fk(model: &RobotModel, pose: &RobotPose) -> Result<PointCloud> {
    if !model.within_limits(&pose.phi) {
        return Err(Error::ConstraintViolation(format!(
            "joint vector {:?} violates the limits {:?}",
            pose.phi, model.joint_limits
        )));
    }
    PointCloud::new(aligned(model, &pose.to_vec()), FrameTag::CanonicalObject)
}

/// Soft assignment of robot points to human points; rows sum to one.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrespondenceMap {
    m: Tensor,
}

impl CorrespondenceMap {
    pub fn new(m: Tensor) -> Result<Self> {
        if m.shape().len() != 2 || m.rows() == 0 || m.cols() == 0 {
            return Err(invalid_arg("correspondence map must be a non-empty matrix"));
        }
        for k in 0..m.rows() {
            let row = m.row(k);
            if row.iter().any(|w| !(*w >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(invalid_arg(format!("correspondence row {k} is not a distribution")));
            }
        }
        Ok(Self { m })
    }

    /// Robot point `k` maps entirely onto human point `assign[k]`.
    pub fn one_hot(assign: &[usize], n_h: usize) -> Result<Self> {
        if assign.iter().any(|&i| i >= n_h) {
            return Err(invalid_arg("assignment index out of range"));
        }
        let mut data = vec![0.0; assign.len() * n_h];
        for (k, &i) in assign.iter().enumerate() {
            data[k * n_h + i] = 1.0;
        }
        Self::new(Tensor::matrix(assign.len(), n_h, data))
    }

    /// Each robot point onto its nearest human point.
    pub fn nearest(robot: &PointCloud, human: &PointCloud) -> Result<Self> {
        let assign: Vec<usize> = robot
            .points()
            .iter()
            .map(|r| {
                let d: Vec<f64> = human.points().iter().map(|h| (*h - *r).norm()).collect();
                (0..d.len()).min_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b))).unwrap_or(0)
            })
            .collect();
        Self::one_hot(&assign, human.len())
    }

    pub fn n_robot(&self) -> usize {
        self.m.rows()
    }

    pub fn n_human(&self) -> usize {
        self.m.cols()
    }

    pub fn weight(&self, k: usize, i: usize) -> f64 {
        self.m.at(k, i)
    }

    /// Human point carrying the largest weight of robot point `k`.
    pub fn dominant(&self, k: usize) -> usize {
        let row = self.m.row(k);
        (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a))).unwrap_or(0)
    }

    /// `sum_i M_ki A_ij` for an `N_H x N_O` matrix.
    pub fn transfer(&self, a: &Tensor) -> Result<Tensor> {
        if a.rows() != self.n_human() {
            return Err(invalid_arg("score matrix rows must match the human point count"));
        }
        let (nr, nh, no) = (self.n_robot(), self.n_human(), a.cols());
        let mut out = vec![0.0; nr * no];
        for k in 0..nr {
            for i in 0..nh {
                let w = self.m.at(k, i);
                if w == 0.0 {
                    continue;
                }
                for j in 0..no {
                    out[k * no + j] += w * a.at(i, j);
                }
            }
        }
        Ok(Tensor::matrix(nr, no, out))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RobotScoreConfig {
    pub tau: f64,
    /// `exp(-d / tau)` when true, `exp(-d) / tau` otherwise.
    pub tau_inside_exp: bool,
    pub sigma2: f64,
    pub n_b: usize,
    pub min_valid_fraction: f64,
}

impl Default for RobotScoreConfig {
    fn default() -> Self {
        Self {
            tau: 20.0,
            tau_inside_exp: true,
            sigma2: 1.0,
            n_b: 64,
            min_valid_fraction: 0.1,
        }
    }
}

/// Contact and orientational scores of robot points against `object`.
/// `flows[k]` holds the sampled flows transferred to robot point `k`.
/// Both outputs are `N_R x N_O`, row-major.
pub fn robot_scores<T: Real>(
    points: &[V3<T>],
    object: &[Vec3],
    flows: &[Vec<Vec3>],
    bins: &SphereBins,
    cfg: &RobotScoreConfig,
) -> (Vec<T>, Vec<T>) {
    let floor = T::cst(-(bins.len() as f64).ln());
    let mut contact = Vec::with_capacity(points.len() * object.len());
    let mut orient = Vec::with_capacity(points.len() * object.len());
    let inv = 1.0 / (2.0 * cfg.sigma2);
    for (k, &r) in points.iter().enumerate() {
        for &o in object {
            let d = r - V3::lift(o);
            let d2 = d.norm_squared();
            let dist = if d2.value() == 0.0 { T::zero() } else { d2.sqrt() };
            contact.push(if cfg.tau_inside_exp {
                (dist * (-1.0 / cfg.tau)).exp()
            } else {
                (-dist).exp() * (1.0 / cfg.tau)
            });

            let mut acc: Vec<T> = vec![T::zero(); bins.len()];
            let mut valid = 0usize;
            for f in &flows[k] {
                let c = d.cross(V3::lift(*f));
                let n2 = c.norm_squared();
                if n2.value().sqrt() < DEGENERATE_CROSS {
                    continue;
                }
                valid += 1;
                let x = c.scale(T::one() / n2.sqrt());
                let logits: Vec<T> = bins
                    .directions()
                    .iter()
                    .map(|b| (x - V3::lift(*b)).norm_squared() * (-inv))
                    .collect();
                let mut z = T::zero();
                let e: Vec<T> = logits.iter().map(|l| l.exp()).collect();
                for v in &e {
                    z = z + *v;
                }
                for (a, v) in acc.iter_mut().zip(&e) {
                    *a = *a + *v / z;
                }
            }
            if valid == 0 || (valid as f64) < cfg.min_valid_fraction * flows[k].len() as f64 {
                orient.push(floor);
                continue;
            }
            let mut total = T::zero();
            for a in &acc {
                total = total + *a;
            }
            let mut h = T::zero();
            for a in &acc {
                let p = *a / total;
                h = h + p * p.ln();
            }
            orient.push(h);
        }
    }
    (contact, orient)
}

/// What the robot should reproduce.
#[derive(Clone, Debug)]
pub struct RobotTargets {
    pub object: Vec<Vec3>,
    /// `N_R x N_O`.
    pub contact: Tensor,
    pub orientational: Tensor,
    /// Sampled flows transferred to each robot point.
    pub flows: Vec<Vec<Vec3>>,
}

impl RobotTargets {
    /// Human scores and flows carried over to the robot through `m`; each
    /// robot point borrows the flows of its dominant human point.
    pub fn from_human(bundle: &AffordanceBundle, set: &HoiSampleSet, m: &CorrespondenceMap) -> Result<Self> {
        if m.n_human() != set.n_h() || bundle.contact.rows() != set.n_h() || bundle.contact.cols() != set.n_o() {
            return Err(invalid_arg("bundle, sample set and correspondence sizes disagree"));
        }
        let flows = (0..m.n_robot())
            .map(|k| {
                let i = m.dominant(k);
                set.flows.iter().map(|f| f.vectors()[i]).collect()
            })
            .collect();
        Ok(Self {
            object: set.object.points().to_vec(),
            contact: m.transfer(&bundle.contact)?,
            orientational: m.transfer(&bundle.orientational)?,
            flows,
        })
    }

    /// Scores the robot itself produces at `pose`.
    pub fn from_pose(
        model: &RobotModel,
        pose: &RobotPose,
        object: &[Vec3],
        flows: Vec<Vec<Vec3>>,
        cfg: &RobotScoreConfig,
    ) -> Result<Self> {
        if flows.len() != model.n_points() {
            return Err(invalid_arg("one flow list per robot point is required"));
        }
        let pts = robot_fk(model, pose)?;
        let bins = make_sphere_bins(cfg.n_b)?;
        let (c, r) = robot_scores(pts.points(), object, &flows, &bins, cfg);
        let (nr, no) = (model.n_points(), object.len());
        Ok(Self {
            object: object.to_vec(),
            contact: Tensor::matrix(nr, no, c),
            orientational: Tensor::matrix(nr, no, r),
            flows,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CrossFitConfig {
    /// Weight of the orientational term.
    pub lambda: f64,
    pub scores: RobotScoreConfig,
    /// Hinge penalty on robot points closer than `margin` to object points.
    pub penetration_weight: f64,
    pub margin: f64,
    /// Keep `(R, t)` at their initial values.
    pub fix_rigid: bool,
    pub descent: DescentConfig,
}

impl Default for CrossFitConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            scores: RobotScoreConfig::default(),
            penetration_weight: 1.0,
            margin: 0.01,
            fix_rigid: false,
            descent: DescentConfig {
                iters: 300,
                lr: 1.0,
                grow: 2.0,
                ..Default::default()
            },
        }
    }
}

/// Residuals whose squares sum to the matching loss: contact mismatch,
/// orientational mismatch scaled by `sqrt(lambda)` and the penetration
/// hinge, each `N_R x N_O` long.
pub fn cross_residuals<T: Real>(
    model: &RobotModel,
    targets: &RobotTargets,
    bins: &SphereBins,
    cfg: &CrossFitConfig,
    x: &[T],
) -> Vec<T> {
    let pts = aligned(model, x);
    let (c, r) = robot_scores(&pts, &targets.object, &targets.flows, bins, &cfg.scores);
    let n = c.len() as f64;
    let wc = (1.0 / n).sqrt();
    let wr = (cfg.lambda / n).sqrt();
    let wp = cfg.penetration_weight.sqrt();
    let mut out = Vec::with_capacity(3 * c.len());
    out.extend(c.iter().zip(targets.contact.data()).map(|(v, t)| (*v + -*t) * wc));
    out.extend(r.iter().zip(targets.orientational.data()).map(|(v, t)| (*v + -*t) * wr));
    for p in &pts {
        for o in &targets.object {
            let d2 = (*p - V3::lift(*o)).norm_squared();
            out.push(if wp > 0.0 && d2.value() < cfg.margin * cfg.margin {
                (T::cst(cfg.margin) - d2.sqrt()) * wp
            } else {
                T::zero()
            });
        }
    }
    out
}

/// Mean squared contact mismatch plus `lambda` times mean squared
/// orientational mismatch plus the penetration hinge, at flattened pose `x`.
pub fn cross_objective<T: Real>(
    model: &RobotModel,
    targets: &RobotTargets,
    bins: &SphereBins,
    cfg: &CrossFitConfig,
    x: &[T],
) -> T {
    let mut loss = T::zero();
    for r in cross_residuals(model, targets, bins, cfg, x) {
        loss = loss + r.square();
    }
    loss
}

#[derive(Clone, Debug)]
pub struct RobotFit {
    pub pose: RobotPose,
    pub loss: f64,
    pub trace: Vec<f64>,
}

/// Projected descent on the matching loss from `init` along Gauss-Newton
/// directions; joint angles are clamped into their limits after every step.
pub fn cross_embodiment_fit(
    model: &RobotModel,
    targets: &RobotTargets,
    init: &RobotPose,
    cfg: &CrossFitConfig,
) -> Result<RobotFit> {
    let (nr, no) = (model.n_points(), targets.object.len());
    if targets.contact.shape() != [nr, no] || targets.orientational.shape() != [nr, no] || targets.flows.len() != nr {
        return Err(invalid_arg(format!("targets must cover {nr} robot points and {no} object points")));
    }
    if init.phi.len() != model.dof() {
        return Err(invalid_arg("initial joint vector has the wrong length"));
    }
    if !(cfg.lambda >= 0.0) {
        return Err(Error::InvalidConfig("lambda must be non-negative".into()));
    }
    let bins = make_sphere_bins(cfg.scores.n_b)?;
    let dof = model.dof();
    let full0 = init.to_vec();
    let free: Vec<usize> = if cfg.fix_rigid { (0..dof).collect() } else { (0..dof + 6).collect() };
    let expand = |x: &[f64]| {
        let mut full = full0.clone();
        for (k, &i) in free.iter().enumerate() {
            full[i] = x[k];
        }
        full
    };
    // Jacobian of the last evaluated point, reused for the step direction.
    let last_jac = RefCell::new((Vec::new(), Vec::new()));
    let h = 1e-6;
    let res = minimize_along(
        free.iter().map(|&i| full0[i]).collect(),
        &cfg.descent,
        |x| {
            let full = expand(x);
            let r = cross_residuals(model, targets, &bins, cfg, &full);
            let (m, n) = (r.len(), free.len());
            let mut jac = vec![0.0; m * n];
            let mut xp = full.clone();
            for (c, &i) in free.iter().enumerate() {
                xp[i] = full[i] + h;
                let up = cross_residuals(model, targets, &bins, cfg, &xp);
                xp[i] = full[i] - h;
                let down = cross_residuals(model, targets, &bins, cfg, &xp);
                xp[i] = full[i];
                for row in 0..m {
                    jac[row * n + c] = (up[row] - down[row]) / (2.0 * h);
                }
            }
            let loss = r.iter().map(|v| v * v).sum();
            let grad = (0..n).map(|c| 2.0 * (0..m).map(|row| jac[row * n + c] * r[row]).sum::<f64>()).collect();
            *last_jac.borrow_mut() = (x.to_vec(), jac);
            (loss, grad)
        },
        |x, g| {
            let cached = last_jac.borrow();
            debug_assert_eq!(cached.0, x);
            gauss_newton_direction(&cached.1, x.len(), &vec![0.0; x.len()], 1e-9, g)
        },
        |x| model.clamp(&mut x[..dof]),
        |_| true,
    )?;
    let full = expand(&res.x);
    Ok(RobotFit {
        pose: RobotPose::from_slice(dof, &full),
        loss: res.loss,
        trace: res.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitting::ad::{value_and_gradient, Var};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scene(model: &RobotModel, seed: u64, n_obj: usize, k: usize) -> (Vec<Vec3>, Vec<Vec<Vec3>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let object = (0..n_obj)
            .map(|_| Vec3::new(rng.gen_range(0.2..0.6), rng.gen_range(-0.2..0.3), rng.gen_range(-0.1..0.1)))
            .collect();
        let flows = (0..model.n_points())
            .map(|_| {
                (0..k)
                    .map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                    .collect()
            })
            .collect();
        (object, flows)
    }

    fn pose(phi: &[f64]) -> RobotPose {
        RobotPose {
            phi: phi.to_vec(),
            r: Vec3::new(0.0, 0.0, 0.1),
            t: Vec3::new(0.05, 0.0, 0.0),
        }
    }

    #[test]
    fn straight_chain_reaches_total_length() {
        let model = RobotModel::planar_3dof();
        let joints = model.joint_positions(&[0.0; 3]);
        let total: f64 = model.links.iter().map(|l| l.0).sum();
        assert!((joints[3] - Vec3::new(total, 0.0, 0.0)).norm() < 1e-12);
        let bent = model.joint_positions(&[std::f64::consts::FRAC_PI_2, 0.0, 0.0]);
        assert!((bent[3] - Vec3::new(0.0, total, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn limits_are_enforced() {
        let model = RobotModel::planar_3dof();
        assert!(matches!(
            robot_fk(&model, &pose(&[3.0, 0.0, 0.0])),
            Err(Error::ConstraintViolation(_))
        ));
        assert!(matches!(
            RobotModel::new(vec![(0.1, 0.0); 2], vec![(0.5, -0.5), (-1.0, 1.0)], 4),
            Err(Error::InvalidConfig(_))
        ));
        assert_eq!(robot_fk(&model, &pose(&[0.1, 0.2, 0.3])).unwrap().len(), model.n_points());
    }

    #[test]
    fn correspondence_rows_must_be_distributions() {
        assert!(CorrespondenceMap::new(Tensor::matrix(1, 2, vec![0.5, 0.4])).is_err());
        assert!(CorrespondenceMap::new(Tensor::matrix(1, 2, vec![1.5, -0.5])).is_err());
        let m = CorrespondenceMap::new(Tensor::matrix(2, 2, vec![0.25, 0.75, 1.0, 0.0])).unwrap();
        assert_eq!(m.dominant(0), 1);
        let a = Tensor::matrix(2, 1, vec![4.0, 8.0]);
        assert_eq!(m.transfer(&a).unwrap().data(), &[7.0, 4.0]);
    }

    #[test]
    fn coincident_points_score_full_contact() {
        let bins = make_sphere_bins(16).unwrap();
        let p = Vec3::new(0.1, 0.2, 0.3);
        let cfg = RobotScoreConfig::default();
        let (c, r) = robot_scores(&[p], &[p], &[vec![Vec3::new(1.0, 0.0, 0.0)]], &bins, &cfg);
        assert_eq!(c[0], 1.0);
        // a zero offset leaves no usable direction
        assert_eq!(r[0], -(16f64).ln());
    }

    #[test]
    fn ad_gradient_matches_finite_differences() {
        let model = RobotModel::new(vec![(0.3, 0.02), (0.2, 0.02), (0.1, 0.02)], vec![(-2.5, 2.5); 3], 3).unwrap();
        let (object, flows) = scene(&model, 2, 6, 3);
        let cfg = CrossFitConfig {
            scores: RobotScoreConfig {
                n_b: 16,
                ..Default::default()
            },
            margin: 0.2,
            ..Default::default()
        };
        let targets = RobotTargets::from_pose(&model, &pose(&[0.4, -0.7, 0.9]), &object, flows, &cfg.scores).unwrap();
        let bins = make_sphere_bins(16).unwrap();
        let x = pose(&[0.1, -0.2, 0.6]).to_vec();
        let (_, grad) = value_and_gradient(&x, |v: &[Var]| cross_objective(&model, &targets, &bins, &cfg, v));
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let up = cross_objective(&model, &targets, &bins, &cfg, &xp);
            xp[i] -= 2.0 * h;
            let down = cross_objective(&model, &targets, &bins, &cfg, &xp);
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8);
            assert!(rel < 1e-3, "param {i}: fd {fd} vs ad {}", grad[i]);
        }
    }

    #[test]
    fn recovers_joint_angles_with_fixed_placement() {
        let model = RobotModel::planar_3dof();
        let (object, flows) = scene(&model, 1, 16, 4);
        let cfg = CrossFitConfig {
            fix_rigid: true,
            penetration_weight: 0.0,
            ..Default::default()
        };
        let truth = pose(&[0.4, -0.7, 0.9]);
        let targets = RobotTargets::from_pose(&model, &truth, &object, flows, &cfg.scores).unwrap();
        let fit = cross_embodiment_fit(&model, &targets, &pose(&[0.1, -0.3, 0.5]), &cfg).unwrap();
        for (a, b) in fit.pose.phi.iter().zip(&truth.phi) {
            assert!((a - b).abs() < 0.1, "{:?}", fit.pose.phi);
        }
        assert_eq!((fit.pose.r, fit.pose.t), (truth.r, truth.t));
        assert!(fit.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn lambda_zero_ignores_orientational_targets() {
        let model = RobotModel::new(vec![(0.3, 0.02), (0.2, 0.02)], vec![(-2.0, 2.0); 2], 3).unwrap();
        let (object, flows) = scene(&model, 5, 5, 3);
        let mut cfg = CrossFitConfig {
            lambda: 0.0,
            ..Default::default()
        };
        let mut targets =
            RobotTargets::from_pose(&model, &pose(&[0.3, 0.5]), &object, flows, &cfg.scores).unwrap();
        let bins = make_sphere_bins(cfg.scores.n_b).unwrap();
        let x = pose(&[0.0, 0.0]).to_vec();
        let before = cross_objective(&model, &targets, &bins, &cfg, &x);
        targets.orientational.data_mut().iter_mut().for_each(|v| *v -= 1.0);
        assert_eq!(cross_objective(&model, &targets, &bins, &cfg, &x), before);
        cfg.lambda = 1.0;
        assert!(cross_objective(&model, &targets, &bins, &cfg, &x) > before);
    }

    #[test]
    fn objective_is_invariant_to_object_order() {
        let model = RobotModel::new(vec![(0.3, 0.02), (0.2, 0.02)], vec![(-2.0, 2.0); 2], 3).unwrap();
        let (object, flows) = scene(&model, 6, 7, 3);
        let cfg = CrossFitConfig::default();
        let targets = RobotTargets::from_pose(&model, &pose(&[0.3, 0.5]), &object, flows, &cfg.scores).unwrap();
        let perm: Vec<usize> = vec![3, 0, 6, 1, 5, 2, 4];
        let no = object.len();
        let permute = |t: &Tensor| {
            let mut out = vec![0.0; t.len()];
            for k in 0..t.rows() {
                for (j, &p) in perm.iter().enumerate() {
                    out[k * no + j] = t.at(k, p);
                }
            }
            Tensor::matrix(t.rows(), no, out)
        };
        let shuffled = RobotTargets {
            object: perm.iter().map(|&p| object[p]).collect(),
            contact: permute(&targets.contact),
            orientational: permute(&targets.orientational),
            flows: targets.flows.clone(),
        };
        let bins = make_sphere_bins(cfg.scores.n_b).unwrap();
        let x = pose(&[-0.2, 0.9]).to_vec();
        let a = cross_objective(&model, &targets, &bins, &cfg, &x);
        let b = cross_objective(&model, &shuffled, &bins, &cfg, &x);
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }
}

//! Articulated capsule body standing in for a full parametric mesh model.
//!
//! Every non-root joint owns the bone that ends at it: bone `j` runs from
//! `parent(j)` to `j`, is a capsule of radius `radius[j]`, and is rigidly
//! attached to the world rotation `G_j = G_parent * exp(theta_j)`. The root
//! carries no bone and no local rotation; its orientation is the global
//! rotation of the body.

use crate::error::{Error, Result};
use crate::geometry::{fps_sample, FrameTag, PointCloud};
use crate::math::{Mat3, Matrix3, Real, Vec3, V3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BodyPart {
    Pelvis,
    Torso,
    Head,
    LeftArm,
    LeftHand,
    RightArm,
    RightHand,
    LeftLeg,
    RightLeg,
}

impl BodyPart {
    pub fn is_left_arm(self) -> bool {
        matches!(self, BodyPart::LeftArm | BodyPart::LeftHand)
    }

    pub fn is_right_arm(self) -> bool {
        matches!(self, BodyPart::RightArm | BodyPart::RightHand)
    }
}

/// Which shape multiplier scales a bone's offset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LengthGroup {
    Limb,
    Trunk,
}

#[derive(Clone, Debug)]
pub struct Joint {
    pub name: &'static str,
    pub parent: Option<usize>,
    /// Rest-pose offset from the parent joint.
    pub offset: Vec3,
    /// Primary hinge axis, used by the pose solver.
    pub axis: Vec3,
    /// Radius of the bone ending at this joint.
    pub radius: f64,
    pub part: BodyPart,
    pub group: LengthGroup,
    /// Relative share of canonical points per unit area on this bone.
    pub density: f64,
}

/// Surface sample attached to a bone: `u` along the bone, `dir` radial.
#[derive(Clone, Copy, Debug)]
pub struct SurfaceSample {
    pub bone: usize,
    pub u: f64,
    pub dir: Vec3,
}

/// Number of shape multipliers: limb length, torso length, radius.
pub const SHAPE_DIMS: usize = 3;

#[derive(Clone, Debug)]
pub struct ArticulatedBody {
    joints: Vec<Joint>,
    root_position: Vec3,
    surface_samples_per_segment: usize,
    samples: Vec<SurfaceSample>,
    canonical_indices: Vec<usize>,
}

const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

fn joint(
    name: &'static str,
    parent: usize,
    offset: [f64; 3],
    axis: Vec3,
    radius: f64,
    part: BodyPart,
    group: LengthGroup,
) -> Joint {
    Joint {
        name,
        parent: Some(parent),
        offset: Vec3::from_array(offset),
        axis,
        radius,
        part,
        group,
        density: 1.0,
    }
}

/// Default skeleton in a z-up frame, facing +x, left side at +y.
pub fn default_joints() -> Vec<Joint> {
    use BodyPart::*;
    use LengthGroup::*;
    let mut j = vec![Joint {
        name: "pelvis",
        parent: None,
        offset: Vec3::zeros(),
        axis: Z,
        radius: 0.0,
        part: Pelvis,
        group: Trunk,
        density: 1.0,
    }];
    let mut spine = joint("spine", 0, [0.0, 0.0, 0.22], Y, 0.13, Pelvis, Trunk);
    spine.density = 2.0;
    j.push(spine);
    j.push(joint("chest", 1, [0.0, 0.0, 0.22], Y, 0.14, BodyPart::Torso, Trunk));
    j.push(joint("neck", 2, [0.0, 0.0, 0.12], Y, 0.05, Head, Trunk));
    j.push(joint("head", 3, [0.0, 0.0, 0.20], Y, 0.10, Head, Trunk));
    for (side, arm, hand) in [(1.0, LeftArm, LeftHand), (-1.0, RightArm, RightHand)] {
        let base = j.len();
        let (sh, el, wr, ha) = if side > 0.0 {
            ("l_shoulder", "l_elbow", "l_wrist", "l_hand")
        } else {
            ("r_shoulder", "r_elbow", "r_wrist", "r_hand")
        };
        j.push(joint(sh, 2, [0.0, 0.17 * side, 0.0], Z, 0.05, BodyPart::Torso, Trunk));
        j.push(joint(el, base, [0.0, 0.28 * side, 0.0], Z, 0.045, arm, Limb));
        j.push(joint(wr, base + 1, [0.0, 0.25 * side, 0.0], Z, 0.04, arm, Limb));
        // hands are sampled densely, like the vertex-rich hands of a mesh
        let mut h = joint(ha, base + 2, [0.0, 0.14 * side, 0.0], Z, 0.035, hand, Limb);
        h.density = 4.0;
        j.push(h);
    }
    for (side, leg) in [(1.0, LeftLeg), (-1.0, RightLeg)] {
        let base = j.len();
        let (hip, knee, ankle, toe) = if side > 0.0 {
            ("l_hip", "l_knee", "l_ankle", "l_toe")
        } else {
            ("r_hip", "r_knee", "r_ankle", "r_toe")
        };
        let mut h = joint(hip, 0, [0.0, 0.09 * side, -0.05], Y, 0.08, Pelvis, Trunk);
        h.density = 2.0;
        j.push(h);
        j.push(joint(knee, base, [0.0, 0.0, -0.42], Y, 0.07, leg, Limb));
        j.push(joint(ankle, base + 1, [0.0, 0.0, -0.42], Y, 0.05, leg, Limb));
        j.push(joint(toe, base + 2, [0.15, 0.0, -0.02], Y, 0.04, leg, Limb));
    }
    j
}

/// Pelvis height above the floor in the rest pose.
pub const PELVIS_HEIGHT: f64 = 0.95;

fn perpendicular_basis(axis: Vec3) -> (Vec3, Vec3) {
    let helper = if axis.x.abs() < 0.9 {
        Vec3::new(1.0, 0.0, 0.0)
    } else {
        Vec3::new(0.0, 1.0, 0.0)
    };
    let e1 = axis.cross(helper).normalized();
    let e2 = axis.cross(e1).normalized();
    (e1, e2)
}

/// Deterministic near-uniform lattice over a capsule surface.
fn capsule_samples(bone: usize, offset: Vec3, radius: f64, n: usize) -> Vec<SurfaceSample> {
    let len = offset.norm();
    let axis = offset.normalized();
    let (e1, e2) = perpendicular_basis(axis);
    let cap = 2.0 * std::f64::consts::PI * radius * radius;
    let side = 2.0 * std::f64::consts::PI * radius * len;
    let total = 2.0 * cap + side;
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let a = (i as f64 + 0.5) / n as f64 * total;
            let phi = golden * i as f64;
            let ring = e1 * phi.cos() + e2 * phi.sin();
            if a < cap {
                let h = 1.0 - a / cap;
                let dir = -axis * h + ring * (1.0 - h * h).max(0.0).sqrt();
                SurfaceSample { bone, u: 0.0, dir }
            } else if a < cap + side {
                SurfaceSample {
                    bone,
                    u: (a - cap) / side,
                    dir: ring,
                }
            } else {
                let h = (a - cap - side) / cap;
                let dir = axis * h + ring * (1.0 - h * h).max(0.0).sqrt();
                SurfaceSample { bone, u: 1.0, dir }
            }
        })
        .collect()
}

/// Pose and shape of the body. `theta` has one axis-angle vector per
/// non-root joint; `beta` holds the shape multipliers (1 = rest shape).
#[derive(Clone, Debug, PartialEq)]
pub struct BodyParams {
    pub theta: Vec<Vec3>,
    pub beta: Vec<f64>,
    pub r_global: Vec3,
    pub t_global: Vec3,
}

impl BodyParams {
    pub fn zero(body: &ArticulatedBody) -> Self {
        Self {
            theta: vec![Vec3::zeros(); body.joint_count() - 1],
            beta: vec![1.0; SHAPE_DIMS],
            r_global: Vec3::zeros(),
            t_global: Vec3::zeros(),
        }
    }

    /// Flattened layout: theta (3 per joint), beta, r_global, t_global.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.theta.len() * 3 + self.beta.len() + 6);
        for t in &self.theta {
            v.extend_from_slice(&t.to_array());
        }
        v.extend_from_slice(&self.beta);
        v.extend_from_slice(&self.r_global.to_array());
        v.extend_from_slice(&self.t_global.to_array());
        v
    }

    pub fn from_slice(body: &ArticulatedBody, v: &[f64]) -> Self {
        let nj = body.joint_count() - 1;
        let theta = (0..nj)
            .map(|j| Vec3::new(v[3 * j], v[3 * j + 1], v[3 * j + 2]))
            .collect();
        let b0 = 3 * nj;
        let beta = v[b0..b0 + SHAPE_DIMS].to_vec();
        let r0 = b0 + SHAPE_DIMS;
        Self {
            theta,
            beta,
            r_global: Vec3::new(v[r0], v[r0 + 1], v[r0 + 2]),
            t_global: Vec3::new(v[r0 + 3], v[r0 + 4], v[r0 + 5]),
        }
    }

    /// Equivalent parameters (identical vertices) whose global rotation is
    /// `r_global`. The root carries no surface points, so a change of
    /// global rotation is absorbed by the root's children.
    pub fn regauged(&self, body: &ArticulatedBody, r_global: Vec3) -> Self {
        let old = Matrix3::exp_so3(self.r_global);
        let new = Matrix3::exp_so3(r_global);
        let change = new.transpose().mul_mat(&old);
        let mut theta = self.theta.clone();
        for (i, j) in body.joints().iter().enumerate().skip(1) {
            if j.parent == Some(0) {
                theta[i - 1] = change.mul_mat(&Matrix3::exp_so3(self.theta[i - 1])).log_so3();
            }
        }
        let root = body.root_position();
        Self {
            theta,
            beta: self.beta.clone(),
            r_global,
            t_global: self.t_global + old.mul_vec(root) - new.mul_vec(root),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite()) && self.beta.iter().all(|&b| b > 0.0)
    }
}

impl ArticulatedBody {
    pub fn new(joints: Vec<Joint>, samples_per_segment: usize, n_points: usize) -> Result<Self> {
        if joints.first().map(|j| j.parent.is_some()).unwrap_or(true) {
            return Err(Error::InvalidConfig("joint 0 must be the root".into()));
        }
        for (i, j) in joints.iter().enumerate().skip(1) {
            match j.parent {
                Some(p) if p < i => {}
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "joint {i} must have an earlier parent"
                    )))
                }
            }
        }
        let mut samples = Vec::new();
        for (i, j) in joints.iter().enumerate().skip(1) {
            samples.extend(capsule_samples(i, j.offset, j.radius, samples_per_segment));
        }
        if n_points > samples.len() {
            return Err(Error::InvalidConfig(format!(
                "{n_points} canonical points requested but only {} surface samples",
                samples.len()
            )));
        }
        let mut body = Self {
            joints,
            root_position: Vec3::new(0.0, 0.0, PELVIS_HEIGHT),
            surface_samples_per_segment: samples_per_segment,
            samples,
            canonical_indices: Vec::new(),
        };
        let all: Vec<usize> = (0..body.samples.len()).collect();
        let dense = body.rest_points(&all);
        let dense = PointCloud::new(dense, FrameTag::Raw)?;
        body.canonical_indices = body.allocate(&dense, n_points)?;
        // co-center the canonical cloud with the object frame origin
        let c = dense.select(&body.canonical_indices)?.centroid();
        body.root_position = body.root_position - c;
        Ok(body)
    }

    /// Per-bone FPS with point quotas proportional to area times density
    /// (largest-remainder rounding), concatenated in bone order.
    fn allocate(&self, dense: &PointCloud, n_points: usize) -> Result<Vec<usize>> {
        let weights: Vec<f64> = self.joints[1..]
            .iter()
            .map(|j| {
                let r = j.radius;
                (2.0 * std::f64::consts::PI * r * j.offset.norm() + 4.0 * std::f64::consts::PI * r * r)
                    * j.density
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let exact: Vec<f64> = weights.iter().map(|w| w / total * n_points as f64).collect();
        let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut order: Vec<usize> = (0..quota.len()).collect();
        order.sort_by(|&a, &b| {
            (exact[b] - exact[b].floor())
                .total_cmp(&(exact[a] - exact[a].floor()))
                .then(a.cmp(&b))
        });
        let short = n_points - quota.iter().sum::<usize>();
        for &b in order.iter().take(short) {
            quota[b] += 1;
        }
        let per = self.surface_samples_per_segment;
        let mut out = Vec::with_capacity(n_points);
        for (b, &q) in quota.iter().enumerate() {
            if q > per {
                return Err(Error::InvalidConfig(format!(
                    "bone {} needs {q} canonical points but has {per} surface samples",
                    self.joints[b + 1].name
                )));
            }
            if q == 0 {
                continue;
            }
            let idx: Vec<usize> = (b * per..(b + 1) * per).collect();
            let local = dense.select(&idx)?;
            out.extend(fps_sample(&local, q, 0)?.into_iter().map(|i| idx[i]));
        }
        Ok(out)
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn n_points(&self) -> usize {
        self.canonical_indices.len()
    }

    pub fn canonical_indices(&self) -> &[usize] {
        &self.canonical_indices
    }

    pub fn surface_samples_per_segment(&self) -> usize {
        self.surface_samples_per_segment
    }

    pub fn root_position(&self) -> Vec3 {
        self.root_position
    }

    /// Params posing this body exactly like `params` pose `other`; bodies
    /// built from the same joints differ only in their root placement.
    pub fn transfer_params(&self, params: &BodyParams, other: &ArticulatedBody) -> BodyParams {
        let rg = Matrix3::exp_so3(params.r_global);
        let mut out = params.clone();
        out.t_global = params.t_global + rg.mul_vec(other.root_position - self.root_position);
        out
    }

    /// Surface sample behind canonical point `i`.
    pub fn sample(&self, i: usize) -> &SurfaceSample {
        &self.samples[self.canonical_indices[i]]
    }

    /// Bone (joint index) of each canonical point.
    pub fn labels(&self) -> Vec<u16> {
        (0..self.n_points())
            .map(|i| self.sample(i).bone as u16)
            .collect()
    }

    pub fn part_of_label(&self, label: u16) -> BodyPart {
        self.joints[label as usize].part
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    fn rest_points(&self, idx: &[usize]) -> Vec<Vec3> {
        let mut pos = vec![self.root_position; self.joints.len()];
        for (i, j) in self.joints.iter().enumerate().skip(1) {
            pos[i] = pos[j.parent.unwrap()] + j.offset;
        }
        idx.iter()
            .map(|&s| {
                let s = &self.samples[s];
                let j = &self.joints[s.bone];
                pos[j.parent.unwrap()] + j.offset * s.u + s.dir * j.radius
            })
            .collect()
    }

    /// World rotation of every joint and the world position of every joint
    /// for the given local rotations and shape, before the global transform.
    pub fn joint_frames<T: Real>(&self, theta: &[V3<T>], beta: &[T]) -> (Vec<Mat3<T>>, Vec<V3<T>>) {
        let n = self.joints.len();
        let mut rot = vec![Mat3::<T>::identity(); n];
        let mut pos = vec![V3::<T>::lift(self.root_position); n];
        for (i, j) in self.joints.iter().enumerate().skip(1) {
            let p = j.parent.unwrap();
            rot[i] = rot[p].mul_mat(&Mat3::exp_so3(theta[i - 1]));
            let scale = match j.group {
                LengthGroup::Limb => beta[0],
                LengthGroup::Trunk => beta[1],
            };
            pos[i] = pos[p] + rot[i].mul_vec(V3::lift(j.offset).scale(scale));
        }
        (rot, pos)
    }

    /// Canonical-point positions for a pose, generic over the scalar so the
    /// same code produces values and reverse-mode gradients.
    pub fn vertices<T: Real>(
        &self,
        theta: &[V3<T>],
        beta: &[T],
        r_global: V3<T>,
        t_global: V3<T>,
    ) -> Vec<V3<T>> {
        let (rot, pos) = self.joint_frames(theta, beta);
        let rg = Mat3::exp_so3(r_global);
        (0..self.n_points())
            .map(|i| {
                let s = self.sample(i);
                let j = &self.joints[s.bone];
                let len_scale = match j.group {
                    LengthGroup::Limb => beta[0],
                    LengthGroup::Trunk => beta[1],
                };
                let local = V3::lift(j.offset * s.u).scale(len_scale)
                    + V3::lift(s.dir * j.radius).scale(beta[2]);
                let p = pos[j.parent.unwrap()] + rot[s.bone].mul_vec(local);
                rg.mul_vec(p) + t_global
            })
            .collect()
    }

    /// Capsule segments `(a, b, radius)` for a pose, in the same frame as
    /// [`ArticulatedBody::vertices`].
    pub fn capsules(&self, params: &BodyParams) -> Vec<(Vec3, Vec3, f64)> {
        let (_, pos) = self.joint_frames(&params.theta, &params.beta);
        let rg = Matrix3::exp_so3(params.r_global);
        self.joints
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, j)| {
                let a = rg.mul_vec(pos[j.parent.unwrap()]) + params.t_global;
                let b = rg.mul_vec(pos[i]) + params.t_global;
                (a, b, j.radius * params.beta[2])
            })
            .collect()
    }
}

/// Default body: 21 joints, 120 samples per bone, 512 canonical points.
pub fn default_body() -> ArticulatedBody {
    ArticulatedBody::new(default_joints(), 120, 512).expect("default body is valid")
}

/// Posed canonical points as a cloud (labels = bone index).
pub fn body_vertices(params: &BodyParams, body: &ArticulatedBody) -> PointCloud {
    let pts = body.vertices(&params.theta, &params.beta, params.r_global, params.t_global);
    PointCloud::new(pts, FrameTag::CanonicalObject)
        .and_then(|pc| pc.with_labels(body.labels()))
        .expect("finite params give finite vertices")
}

/// Zero-pose canonical cloud H0, snapped to the storage lattice.
pub fn build_canonical_body(body: &ArticulatedBody) -> PointCloud {
    body_vertices(&BodyParams::zero(body), body).map_points(super::quantize)
}

pub fn point_segment_distance(p: Vec3, a: Vec3, b: Vec3) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

//! Analytic pose solver replacing a learned motion generator. Each sample
//! is a pure function of `(resolution, object spec, mode, seed)`.

use rand::Rng as _;

use super::body::{ArticulatedBody, BodyParams, BodyPart};
use super::objects::{ObjectInstance, ObjectKind, ObjectShape, ObjectSpec};
use super::quantize;
use crate::error::{invalid_arg, Error, Result};
use crate::geometry::{FlowField, FrameTag, PointCloud};
use crate::math::{Matrix3, Vec3};
use crate::rng::{derive_seed, stream, Rng};

/// Human-object contact threshold (meters).
pub const CONTACT_THRESHOLD: f64 = 0.015;
/// Allowed penetration of body points into the object (meters).
pub const MAX_PENETRATION: f64 = 0.002;
/// Minimum clearance of a non-contacting hand (meters).
pub const FREE_HAND_CLEARANCE: f64 = 0.10;
pub const MIN_CONTACT_POINTS: usize = 5;
pub const MAX_SOLVER_ATTEMPTS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModeId {
    GraspLeft = 0,
    GraspRight = 1,
    TwoHandLift = 2,
    Sit = 3,
    Push = 4,
}

impl ModeId {
    pub const ALL: [ModeId; 5] = [
        ModeId::GraspLeft,
        ModeId::GraspRight,
        ModeId::TwoHandLift,
        ModeId::Sit,
        ModeId::Push,
    ];

    pub fn from_u8(v: u8) -> Option<Self> {
        Self::ALL.get(v as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ModeId::GraspLeft => "grasp-left",
            ModeId::GraspRight => "grasp-right",
            ModeId::TwoHandLift => "two-hand-lift",
            ModeId::Sit => "sit",
            ModeId::Push => "push",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid_arg(format!("unknown interaction mode `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ApproachSide {
    Front = 0,
    Back = 1,
    Left = 2,
    Right = 3,
}

impl ApproachSide {
    pub const ALL: [ApproachSide; 4] = [
        ApproachSide::Front,
        ApproachSide::Back,
        ApproachSide::Left,
        ApproachSide::Right,
    ];

    pub fn from_u8(v: u8) -> Option<Self> {
        Self::ALL.get(v as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ApproachSide::Front => "front",
            ApproachSide::Back => "back",
            ApproachSide::Left => "left",
            ApproachSide::Right => "right",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid_arg(format!("unknown approach side `{s}`")))
    }

    /// Yaw taking the approach frame (human at -x facing +x) to the object
    /// frame, and the number of quarter turns of the object footprint.
    fn yaw(self) -> (f64, u32) {
        use std::f64::consts::{FRAC_PI_2, PI};
        match self {
            ApproachSide::Front => (0.0, 0),
            ApproachSide::Back => (PI, 2),
            ApproachSide::Left => (-FRAC_PI_2, 1),
            ApproachSide::Right => (FRAC_PI_2, 1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct InteractionMode {
    pub mode_id: ModeId,
    pub approach_side: ApproachSide,
}

impl InteractionMode {
    pub fn new(mode_id: ModeId, approach_side: ApproachSide) -> Self {
        Self {
            mode_id,
            approach_side,
        }
    }
}

/// Uniform choice among `modes`, keyed by the seed.
pub fn sample_mode(modes: &[ModeId], seed: u64) -> ModeId {
    modes[(derive_seed(seed, "mode", 0) % modes.len() as u64) as usize]
}

/// Contact bookkeeping recorded at generation time.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ContactAudit {
    /// Human points within the threshold of the analytic object surface.
    pub surface_contacts: Vec<usize>,
    /// Pairs `(i, j)` with `|h_i - o_j| < threshold`.
    pub pairs: Vec<(usize, usize)>,
}

pub fn contact_pairs(human: &PointCloud, object: &PointCloud, threshold: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, h) in human.points().iter().enumerate() {
        for (j, o) in object.points().iter().enumerate() {
            if (*h - *o).norm() < threshold {
                out.push((i, j));
            }
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct HoiSample {
    pub object: PointCloud,
    pub human_goal: PointCloud,
    pub flow_gt: FlowField,
    pub mode: InteractionMode,
    pub seed: u64,
    /// Present on freshly generated samples; not persisted.
    pub audit: Option<ContactAudit>,
    pub instance: Option<ObjectInstance>,
    pub params: Option<BodyParams>,
}

impl HoiSample {
    /// Zero-pose cloud implied by the stored goal and flow.
    pub fn h0(&self) -> PointCloud {
        let inv = FlowField::new(self.flow_gt.vectors().iter().map(|f| -*f).collect());
        inv.displace(&self.human_goal).expect("aligned by construction")
    }
}

pub fn compute_flow_gt(human_goal: &PointCloud, h0: &PointCloud) -> Result<FlowField> {
    if human_goal.len() != h0.len() {
        return Err(invalid_arg(format!(
            "flow: goal has {} points, zero pose has {}",
            human_goal.len(),
            h0.len()
        )));
    }
    Ok(FlowField::new(
        human_goal
            .points()
            .iter()
            .zip(h0.points())
            .map(|(h, z)| *h - *z)
            .collect(),
    ))
}

/// Hand placement: capsule center line offset along `normal` from `contact`.
#[derive(Clone, Copy, Debug)]
struct HandTarget {
    contact: Vec3,
    normal: Vec3,
    dir: Vec3,
}

impl HandTarget {
    fn wrist(&self, hand_len: f64, hand_r: f64, sink: f64) -> Vec3 {
        self.contact + self.normal * (hand_r - sink) - self.dir * (hand_len * 0.5)
    }
}

struct Skeleton<'a> {
    body: &'a ArticulatedBody,
    /// Body-frame world rotation per joint.
    rot: Vec<Matrix3>,
}

impl<'a> Skeleton<'a> {
    fn new(body: &'a ArticulatedBody) -> Self {
        Self {
            body,
            rot: vec![Matrix3::identity(); body.joint_count()],
        }
    }

    fn idx(&self, name: &str) -> usize {
        self.body.joint_index(name).expect("default skeleton joint")
    }

    fn set(&mut self, name: &str, r: Matrix3) {
        let i = self.idx(name);
        self.rot[i] = r;
    }

    /// Points the bone ending at `name` along `dir`.
    fn aim(&mut self, name: &str, dir: Vec3) {
        let i = self.idx(name);
        let rest = self.body.joints()[i].offset.normalized();
        self.rot[i] = Matrix3::rotation_between(rest, dir.normalized());
    }

    fn theta(&self) -> Vec<Vec3> {
        self.body
            .joints()
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, j)| {
                let p = j.parent.unwrap();
                self.rot[p].transpose().mul_mat(&self.rot[i]).log_so3()
            })
            .collect()
    }

    /// Joint positions relative to the pelvis, body frame.
    fn relative_positions(&self) -> Vec<Vec3> {
        let mut pos = vec![Vec3::zeros(); self.body.joint_count()];
        for (i, j) in self.body.joints().iter().enumerate().skip(1) {
            let p = j.parent.unwrap();
            pos[i] = pos[p] + self.rot[i].mul_vec(j.offset);
        }
        pos
    }

    fn bone_length(&self, name: &str) -> f64 {
        self.body.joints()[self.idx(name)].offset.norm()
    }

    fn radius(&self, name: &str) -> f64 {
        self.body.joints()[self.idx(name)].radius
    }
}

fn ry(a: f64) -> Matrix3 {
    Matrix3::exp_so3(Vec3::new(0.0, a, 0.0))
}

/// Elbow position for a two-bone chain with a preferred bend direction.
fn two_bone_elbow(s: Vec3, w: Vec3, a: f64, b: f64, pole: Vec3) -> Option<Vec3> {
    let d = (w - s).norm();
    if d > a + b - 1e-3 || d < (a - b).abs() + 1e-3 {
        return None;
    }
    let n = (w - s) * (1.0 / d);
    let ca = (a * a - b * b + d * d) / (2.0 * d);
    let h = (a * a - ca * ca).max(0.0).sqrt();
    let perp = pole - n * pole.dot(n);
    if perp.norm() < 1e-6 {
        return None;
    }
    Some(s + n * ca + perp.normalized() * h)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Side {
    Left,
    Right,
}

impl Side {
    fn sign(self) -> f64 {
        if self == Side::Left {
            1.0
        } else {
            -1.0
        }
    }
    fn prefix(self) -> &'static str {
        if self == Side::Left {
            "l_"
        } else {
            "r_"
        }
    }
}

/// Hand target on the surface nearest the body for one side.
fn near_face_target(shape: &ObjectShape, side: f64, rng: &mut Rng, lateral: (f64, f64)) -> HandTarget {
    let (hx, hy) = shape.half_footprint();
    let h = shape.height();
    let up = Vec3::new(0.0, 0.0, 1.0);
    match shape.instance.kind {
        ObjectKind::Box => {
            let y = side * rng.gen_range(lateral.0..lateral.1) * (hy - 0.06).max(0.0);
            let z = rng.gen_range((h - 0.25).max(0.7).min(h - 0.08)..=(h - 0.08));
            let tilt = rng.gen_range(0.0..0.35);
            HandTarget {
                contact: Vec3::new(-hx, y, z),
                normal: Vec3::new(-1.0, 0.0, 0.0),
                dir: Vec3::new(0.0, -side * tilt, 1.0).normalized(),
            }
        }
        ObjectKind::Cylinder | ObjectKind::Pole => {
            let r = hx;
            let max_ang = if shape.instance.kind == ObjectKind::Pole { 0.9 } else { 0.75 };
            let ang = std::f64::consts::PI - side * rng.gen_range(lateral.0..lateral.1) * max_ang;
            let z = if shape.instance.kind == ObjectKind::Pole {
                rng.gen_range(0.95..1.3)
            } else {
                rng.gen_range((h - 0.25).max(0.7).min(h - 0.08)..=(h - 0.08))
            };
            let normal = Vec3::new(ang.cos(), ang.sin(), 0.0);
            HandTarget {
                contact: Vec3::new(r * ang.cos(), r * ang.sin(), z),
                normal,
                dir: up,
            }
        }
        ObjectKind::TableComposite => {
            let y = side * rng.gen_range(lateral.0..lateral.1) * (hy - 0.08).max(0.0);
            let x = -hx + rng.gen_range(0.08..0.16);
            let tilt = rng.gen_range(0.0..0.3);
            HandTarget {
                contact: Vec3::new(x, y, h),
                normal: up,
                dir: Vec3::new(1.0, -side * tilt, 0.0).normalized(),
            }
        }
    }
}

/// Hand targets on the left/right flanks of the object.
fn flank_target(shape: &ObjectShape, side: f64, rng: &mut Rng) -> Option<HandTarget> {
    let (hx, hy) = shape.half_footprint();
    let h = shape.height();
    match shape.instance.kind {
        ObjectKind::Box => Some(HandTarget {
            contact: Vec3::new(
                -hx * rng.gen_range(0.1..0.5),
                side * hy,
                rng.gen_range((h - 0.3).max(0.65).min(h - 0.1)..=(h - 0.1)),
            ),
            normal: Vec3::new(0.0, side, 0.0),
            dir: Vec3::new(1.0, 0.0, 0.4).normalized(),
        }),
        ObjectKind::Cylinder => {
            let ang = side * rng.gen_range(1.75..2.1);
            Some(HandTarget {
                contact: Vec3::new(hx * ang.cos(), hx * ang.sin(), rng.gen_range((h - 0.3).max(0.65).min(h - 0.1)..=(h - 0.1))),
                normal: Vec3::new(ang.cos(), ang.sin(), 0.0),
                dir: Vec3::new(0.0, 0.0, 1.0),
            })
        }
        ObjectKind::TableComposite => Some(HandTarget {
            contact: Vec3::new(-hx + rng.gen_range(0.08..0.16), side * (hy - rng.gen_range(0.06..0.1)), h),
            normal: Vec3::new(0.0, 0.0, 1.0),
            dir: Vec3::new(1.0, 0.0, 0.0),
        }),
        ObjectKind::Pole => None,
    }
}

struct PoseSolver<'a> {
    body: &'a ArticulatedBody,
    shape: &'a ObjectShape,
}

impl<'a> PoseSolver<'a> {
    fn arm_lengths(&self, sk: &Skeleton) -> (f64, f64, f64, f64) {
        (
            sk.bone_length("l_elbow"),
            sk.bone_length("l_wrist"),
            sk.bone_length("l_hand"),
            sk.radius("l_hand"),
        )
    }

    fn hang_arm(sk: &mut Skeleton, side: f64, rng: &mut Rng) {
        let p = if side > 0.0 { "l_" } else { "r_" };
        let swing = rng.gen_range(-0.2..0.05);
        sk.aim(&format!("{p}elbow"), Vec3::new(swing, side * rng.gen_range(0.18..0.3), -1.0));
        let fore = Vec3::new(swing + rng.gen_range(0.0..0.25), side * 0.12, -1.0);
        sk.aim(&format!("{p}wrist"), fore);
        sk.aim(&format!("{p}hand"), fore);
    }

    fn crouch(sk: &mut Skeleton, knee: f64) {
        for p in ["l_", "r_"] {
            sk.set(&format!("{p}knee"), ry(-knee));
            sk.set(&format!("{p}ankle"), ry(knee));
        }
    }

    fn lean(sk: &mut Skeleton, lean: f64) {
        for n in ["spine", "chest", "neck", "head", "l_shoulder", "r_shoulder"] {
            sk.set(n, ry(lean));
        }
    }

    /// Standing reach toward one or two hand targets (approach frame).
    fn reach(&self, targets: &[(Side, HandTarget)], rng: &mut Rng) -> Option<BodyParams> {
        let mut sk = Skeleton::new(self.body);
        let (a, b, lh, rh) = self.arm_lengths(&sk);
        let sink = 0.0015;
        let wrists: Vec<(Side, Vec3, HandTarget)> = targets
            .iter()
            .map(|(s, t)| (*s, t.wrist(lh, rh, sink), *t))
            .collect();
        let lowest = wrists.iter().map(|w| w.1.z).fold(f64::INFINITY, f64::min);

        // pick lean and crouch so the shoulders sit above the wrists
        let rest = sk.relative_positions();
        let shoulder_rest = rest[sk.idx("l_shoulder")].z + super::body::PELVIS_HEIGHT;
        let gap = rng.gen_range(0.1..0.4);
        let mut drop = (shoulder_rest - (lowest + gap)).max(0.0);
        let torso = shoulder_rest - super::body::PELVIS_HEIGHT;
        let lean_cap: f64 = rng.gen_range(0.1..0.7);
        let lean_drop = drop.min(torso * (1.0 - lean_cap.cos()));
        let lean = if lean_drop > 0.0 {
            (1.0 - lean_drop / torso).acos()
        } else {
            rng.gen_range(0.0..0.08)
        };
        drop -= lean_drop;
        let leg = sk.bone_length("l_knee") + sk.bone_length("l_ankle");
        if drop / leg > 1.0 - 1.2f64.cos() {
            return None;
        }
        let knee = (1.0 - drop / leg).acos();
        Self::lean(&mut sk, lean);
        Self::crouch(&mut sk, knee);
        let pelvis_z = super::body::PELVIS_HEIGHT - leg * (1.0 - knee.cos());

        let rel = sk.relative_positions();
        let reach = rng.gen_range(0.72..0.93) * (a + b);
        // lateral placement: centered between the targets
        let mean_y = wrists.iter().map(|w| w.1.y).sum::<f64>() / wrists.len() as f64;
        let pelvis_y = if wrists.len() == 1 {
            let s = wrists[0].0.sign();
            wrists[0].1.y - s * rng.gen_range(0.1..0.3)
        } else {
            mean_y + rng.gen_range(-0.03..0.03)
        };
        // stand back far enough that the most demanding arm reaches at `reach`
        let mut pelvis_x = f64::INFINITY;
        for (side, w, _) in &wrists {
            let s_rel = rel[sk.idx(&format!("{}shoulder", side.prefix()))];
            let dy = w.y - (pelvis_y + s_rel.y);
            let dz = w.z - (pelvis_z + s_rel.z);
            let rhs = reach * reach - dy * dy - dz * dz;
            if rhs < 1e-4 {
                return None;
            }
            pelvis_x = pelvis_x.min(w.x - rhs.sqrt() - s_rel.x);
        }
        let pelvis = Vec3::new(pelvis_x, pelvis_y, pelvis_z);

        let mut contacts = Vec::new();
        for (side, w, t) in &wrists {
            let s = side.sign();
            let pre = side.prefix();
            let sh = pelvis + rel[sk.idx(&format!("{pre}shoulder"))];
            let pole = Vec3::new(
                rng.gen_range(-0.6..-0.1),
                s * rng.gen_range(0.3..0.9),
                -1.0,
            );
            let e = two_bone_elbow(sh, *w, a, b, pole)?;
            // every arm bone rests along the same lateral axis
            let rest_dir = self.body.joints()[sk.idx(&format!("{pre}elbow"))].offset.normalized();
            for (bone, dir) in [("elbow", e - sh), ("wrist", *w - e), ("hand", t.dir)] {
                let i = sk.idx(&format!("{pre}{bone}"));
                sk.rot[i] = Matrix3::rotation_between(rest_dir, dir.normalized());
            }
            contacts.push(*side);
        }
        for free in [Side::Left, Side::Right] {
            if !contacts.contains(&free) {
                Self::hang_arm(&mut sk, free.sign(), rng);
            }
        }
        Some(self.params_for(&sk, pelvis, 0.0))
    }

    fn sit(&self, rng: &mut Rng) -> Option<BodyParams> {
        let (hx, _) = self.shape.half_footprint();
        let h = self.shape.height();
        if h > 1.0 || self.shape.instance.kind == ObjectKind::Pole {
            return None;
        }
        let mut sk = Skeleton::new(self.body);
        let seat_r = sk.radius("spine");
        let inset = rng.gen_range(0.15f64..0.25).min(hx * 0.9);
        let pelvis = Vec3::new(-hx + inset, rng.gen_range(-0.05..0.05), h + seat_r - 0.0015);
        Self::lean(&mut sk, rng.gen_range(-0.1..0.15));
        let spread = rng.gen_range(0.0..0.15);
        sk.aim("l_knee", Vec3::new(1.0, spread, 0.0));
        sk.aim("r_knee", Vec3::new(1.0, -spread, 0.0));
        for p in ["l_", "r_"] {
            sk.aim(&format!("{p}ankle"), Vec3::new(rng.gen_range(-0.2..0.2), 0.0, -1.0));
            sk.set(&format!("{p}toe"), Matrix3::identity());
        }
        for s in [1.0, -1.0] {
            let p = if s > 0.0 { "l_" } else { "r_" };
            sk.aim(&format!("{p}elbow"), Vec3::new(0.1, s * 0.15, -1.0));
            let fore = Vec3::new(1.0, s * 0.05, rng.gen_range(-0.5..0.0));
            sk.aim(&format!("{p}wrist"), fore);
            sk.aim(&format!("{p}hand"), fore);
        }
        // the body faces away from the object: body-frame +x is approach -x
        let pelvis_body = Vec3::new(-pelvis.x, -pelvis.y, pelvis.z);
        Some(self.params_for(&sk, pelvis_body, std::f64::consts::PI))
    }

    /// Params placing the pelvis at `pelvis` (body frame) with heading `yaw`.
    fn params_for(&self, sk: &Skeleton, pelvis: Vec3, yaw: f64) -> BodyParams {
        let rz = Matrix3::rot_z(yaw);
        BodyParams {
            theta: sk.theta(),
            beta: vec![1.0; super::body::SHAPE_DIMS],
            r_global: Vec3::new(0.0, 0.0, yaw),
            t_global: rz.mul_vec(pelvis - self.body.root_position()),
        }
    }
}

/// Rotates params about z by `yaw` and shifts by `shift` afterwards.
fn transform_params(p: &BodyParams, yaw: f64, shift: Vec3) -> BodyParams {
    let rz = Matrix3::rot_z(yaw);
    let r = rz.mul_mat(&Matrix3::exp_so3(p.r_global)).log_so3();
    BodyParams {
        theta: p.theta.clone(),
        beta: p.beta.clone(),
        r_global: r,
        t_global: rz.mul_vec(p.t_global) + shift,
    }
}

/// Why a candidate pose was rejected, if it was.
fn check_pose(
    body: &ArticulatedBody,
    shape: &ObjectShape,
    params: &BodyParams,
    mode: ModeId,
) -> std::result::Result<(), String> {
    let pts = super::body::body_vertices(params, body);
    let labels = body.labels();
    let mut contact_count = std::collections::HashMap::<BodyPart, usize>::new();
    let mut min_dist = std::collections::HashMap::<BodyPart, f64>::new();
    for (p, &l) in pts.points().iter().zip(&labels) {
        let d = shape.sdf(*p);
        let part = body.part_of_label(l);
        if d < -MAX_PENETRATION {
            return Err(format!("{part:?} penetrates by {:.1} mm", -d * 1e3));
        }
        if d.abs() <= CONTACT_THRESHOLD {
            *contact_count.entry(part).or_default() += 1;
        }
        let e = min_dist.entry(part).or_insert(f64::INFINITY);
        *e = e.min(d);
    }
    let touching = |part| {
        let n = contact_count.get(&part).copied().unwrap_or(0);
        if n >= MIN_CONTACT_POINTS {
            Ok(())
        } else {
            Err(format!("{part:?} has {n} contact points"))
        }
    };
    let clear = |part| {
        let d = min_dist.get(&part).copied().unwrap_or(f64::INFINITY);
        if d > FREE_HAND_CLEARANCE {
            Ok(())
        } else {
            Err(format!("free {part:?} is {:.1} cm from the object", d * 1e2))
        }
    };
    match mode {
        ModeId::GraspLeft => touching(BodyPart::LeftHand).and(clear(BodyPart::RightHand)),
        ModeId::GraspRight => touching(BodyPart::RightHand).and(clear(BodyPart::LeftHand)),
        ModeId::TwoHandLift | ModeId::Push => {
            touching(BodyPart::LeftHand).and(touching(BodyPart::RightHand))
        }
        ModeId::Sit => touching(BodyPart::Pelvis),
    }
}

/// Bodies used by the solver: contact conditions are always checked on the
/// full-resolution body, samples are emitted at the requested resolution.
#[derive(Clone, Debug)]
pub struct Generator {
    check: ArticulatedBody,
    body: ArticulatedBody,
    h0: PointCloud,
}

impl Generator {
    pub fn new(n_human_points: usize) -> Result<Self> {
        let check = super::body::default_body();
        let body = if n_human_points == check.n_points() {
            check.clone()
        } else {
            ArticulatedBody::new(super::body::default_joints(), check.surface_samples_per_segment(), n_human_points)?
        };
        let h0 = super::body::build_canonical_body(&body);
        Ok(Self { check, body, h0 })
    }

    pub fn body(&self) -> &ArticulatedBody {
        &self.body
    }

    pub fn h0(&self) -> &PointCloud {
        &self.h0
    }
}

/// Solves a pose for `mode` against a sampled instance of `spec`. The
/// returned sample lives in the canonical object frame (object centroid at
/// the origin) and satisfies `human_goal == h0 + flow_gt` exactly.
pub fn generate_scenario(
    gen: &Generator,
    spec: &ObjectSpec,
    mode: InteractionMode,
    n_object_points: usize,
    seed: u64,
) -> Result<HoiSample> {
    let mut rng = stream(seed, "scenario", 0);
    let instance = spec.instantiate(&mut rng);
    let shape = ObjectShape::new(instance);
    let object = shape.point_cloud(n_object_points)?;
    let centroid = object.centroid();

    let (yaw, quarters) = mode.approach_side.yaw();
    let local_shape = shape.quarter_turned(quarters);
    let body = &gen.check;
    let solver = PoseSolver {
        body,
        shape: &local_shape,
    };

    let mut last_reason = String::new();
    for _ in 0..MAX_SOLVER_ATTEMPTS {
        let params = match mode.mode_id {
            ModeId::GraspLeft | ModeId::GraspRight => {
                let side = if mode.mode_id == ModeId::GraspLeft { Side::Left } else { Side::Right };
                let t = near_face_target(&local_shape, side.sign(), &mut rng, (0.1, 0.6));
                solver.reach(&[(side, t)], &mut rng)
            }
            ModeId::Push => {
                let l = near_face_target(&local_shape, 1.0, &mut rng, (0.25, 0.7));
                let r = near_face_target(&local_shape, -1.0, &mut rng, (0.25, 0.7));
                solver.reach(&[(Side::Left, l), (Side::Right, r)], &mut rng)
            }
            ModeId::TwoHandLift => match (
                flank_target(&local_shape, 1.0, &mut rng),
                flank_target(&local_shape, -1.0, &mut rng),
            ) {
                (Some(l), Some(r)) => solver.reach(&[(Side::Left, l), (Side::Right, r)], &mut rng),
                _ => None,
            },
            ModeId::Sit => solver.sit(&mut rng),
        };
        let Some(params) = params else {
            last_reason = "no reachable configuration".to_string();
            continue;
        };
        if let Err(why) = check_pose(body, &local_shape, &params, mode.mode_id) {
            last_reason = why;
            continue;
        }
        // approach frame -> object frame -> canonical object frame
        let world = transform_params(&params, yaw, Vec3::zeros());
        let canonical = transform_params(&world, 0.0, -centroid);
        let params = gen.body.transfer_params(&canonical, body);
        return assemble(&gen.body, &gen.h0, &shape, &object, params, mode, seed, instance);
    }
    Err(Error::GenerationFailure(format!(
        "{} on {} (seed {seed}): no valid pose after {MAX_SOLVER_ATTEMPTS} attempts (last: {last_reason})",
        mode.mode_id.name(),
        instance.kind.name()
    )))
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    body: &ArticulatedBody,
    h0: &PointCloud,
    shape: &ObjectShape,
    object: &PointCloud,
    params: BodyParams,
    mode: InteractionMode,
    seed: u64,
    instance: ObjectInstance,
) -> Result<HoiSample> {
    let centroid = object.centroid();
    let object = object.map_points(|p| quantize(p - centroid));
    let mut object = object;
    object.set_frame(FrameTag::CanonicalObject);
    let posed = super::body::body_vertices(&params, body).map_points(quantize);
    let flow = compute_flow_gt(&posed, h0)?;
    let human_goal = flow.displace(h0)?;
    debug_assert_eq!(human_goal.points(), posed.points());

    let surface_contacts = human_goal
        .points()
        .iter()
        .enumerate()
        .filter(|(_, p)| shape.sdf(**p + centroid).abs() <= CONTACT_THRESHOLD)
        .map(|(i, _)| i)
        .collect();
    let pairs = contact_pairs(&human_goal, &object, CONTACT_THRESHOLD);
    Ok(HoiSample {
        object,
        human_goal,
        flow_gt: flow,
        mode,
        seed,
        audit: Some(ContactAudit {
            surface_contacts,
            pairs,
        }),
        instance: Some(instance),
        params: Some(params),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    fn setup() -> Generator {
        Generator::new(512).unwrap()
    }

    fn part_min_distance(s: &HoiSample, body: &ArticulatedBody, part: BodyPart) -> f64 {
        let shape = ObjectShape::new(s.instance.unwrap());
        let c = shape.point_cloud(s.object.len()).unwrap().centroid();
        s.human_goal
            .points()
            .iter()
            .zip(body.labels())
            .filter(|(_, l)| body.part_of_label(*l) == part)
            .map(|(p, _)| shape.sdf(*p + c))
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn grasp_left_touches_with_left_hand_only() {
        let gen = setup();
        let body = gen.body();
        let mode = InteractionMode::new(ModeId::GraspLeft, ApproachSide::Front);
        for seed in 0..5 {
            let s = generate_scenario(&gen, &ObjectSpec::default_for(ObjectKind::Box), mode, 512, seed).unwrap();
            assert!(part_min_distance(&s, body, BodyPart::LeftHand) < CONTACT_THRESHOLD);
            assert!(part_min_distance(&s, body, BodyPart::RightHand) > FREE_HAND_CLEARANCE);
        }
    }

    #[test]
    fn every_mode_meets_its_contact_condition() {
        let gen = setup();
        let cases = [
            (ObjectKind::Box, ModeId::GraspRight, ApproachSide::Back),
            (ObjectKind::Cylinder, ModeId::TwoHandLift, ApproachSide::Left),
            (ObjectKind::TableComposite, ModeId::Sit, ApproachSide::Right),
            (ObjectKind::Pole, ModeId::Push, ApproachSide::Front),
            (ObjectKind::Pole, ModeId::GraspLeft, ApproachSide::Left),
        ];
        for (kind, id, side) in cases {
            let s = generate_scenario(&gen, &ObjectSpec::default_for(kind), InteractionMode::new(id, side), 256, 11).unwrap();
            let shape = ObjectShape::new(s.instance.unwrap());
            let c = shape.point_cloud(256).unwrap().centroid();
            for p in s.human_goal.points() {
                assert!(shape.sdf(*p + c) >= -MAX_PENETRATION - 1e-6, "{kind:?} {id:?}");
            }
            assert!(s.audit.as_ref().unwrap().surface_contacts.len() >= MIN_CONTACT_POINTS);
        }
    }

    #[test]
    fn deterministic_and_flow_exact() {
        let gen = setup();
        let h0 = gen.h0();
        let mode = InteractionMode::new(ModeId::GraspRight, ApproachSide::Left);
        let spec = ObjectSpec::default_for(ObjectKind::TableComposite);
        let a = generate_scenario(&gen, &spec, mode, 512, 3).unwrap();
        let b = generate_scenario(&gen, &spec, mode, 512, 3).unwrap();
        assert_eq!(a.human_goal, b.human_goal);
        assert_eq!(a.object, b.object);
        assert_eq!(a.flow_gt, b.flow_gt);
        for ((h, z), f) in a.human_goal.points().iter().zip(h0.points()).zip(a.flow_gt.vectors()) {
            assert_eq!(*z + *f, *h);
            // exact in single precision too
            for k in 0..3 {
                assert_eq!(z.get(k) as f32 + f.get(k) as f32, h.get(k) as f32);
            }
        }
        assert!(a.object.centroid().norm() < 1e-5);
    }

    #[test]
    fn low_resolution_samples_share_the_pose() {
        let full = setup();
        let low = Generator::new(64).unwrap();
        let mode = InteractionMode::new(ModeId::GraspLeft, ApproachSide::Front);
        let spec = ObjectSpec::default_for(ObjectKind::Box);
        let a = generate_scenario(&full, &spec, mode, 64, 8).unwrap();
        let b = generate_scenario(&low, &spec, mode, 64, 8).unwrap();
        assert_eq!(b.human_goal.len(), 64);
        assert_eq!(a.object, b.object);
        let caps = full.body().capsules(a.params.as_ref().unwrap());
        let labels = b.human_goal.labels().unwrap();
        for (p, &bone) in b.human_goal.points().iter().zip(labels) {
            let (s, e, r) = caps[bone as usize - 1];
            let d = super::super::body::point_segment_distance(*p, s, e) - r;
            assert!(d.abs() < 1e-5, "{d}");
        }
    }

    #[test]
    fn mode_draws_are_balanced() {
        let modes = [ModeId::GraspLeft, ModeId::GraspRight];
        let left = (0..100u64).filter(|&s| sample_mode(&modes, s) == ModeId::GraspLeft).count();
        assert!((35..=65).contains(&left), "{left}");
    }

    #[test]
    fn unsupported_combination_fails() {
        let gen = setup();
        let mode = InteractionMode::new(ModeId::Sit, ApproachSide::Front);
        let e = generate_scenario(&gen, &ObjectSpec::default_for(ObjectKind::Pole), mode, 64, 0);
        assert!(matches!(e, Err(Error::GenerationFailure(_))));
    }

    #[test]
    fn flow_identities() {
        let gen = setup();
        let h0 = gen.h0();
        assert!(compute_flow_gt(h0, h0).unwrap().vectors().iter().all(|f| *f == Vec3::zeros()));
        let shifted = h0.translated(Vec3::new(1.0, 0.0, 0.0));
        let f = compute_flow_gt(&shifted, h0).unwrap();
        for (v, (a, b)) in f.vectors().iter().zip(shifted.points().iter().zip(h0.points())) {
            assert_eq!(*v, *a - *b);
            assert!((*v - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
        }
        let short = h0.select(&[0, 1]).unwrap();
        assert!(compute_flow_gt(&short, h0).is_err());
    }
}

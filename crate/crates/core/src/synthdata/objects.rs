//! Procedural objects: unions of boxes and vertical cylinders resting on the
//! floor (z = 0), centered on the z axis.

use rand::Rng as _;

use crate::error::{invalid_arg, Result};
use crate::geometry::{fps_sample, FrameTag, PointCloud};
use crate::math::Vec3;
use crate::rng::{splitmix64, Rng};
use rand::SeedableRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ObjectKind {
    Box,
    Cylinder,
    TableComposite,
    Pole,
}

impl ObjectKind {
    pub fn name(self) -> &'static str {
        match self {
            ObjectKind::Box => "box",
            ObjectKind::Cylinder => "cylinder",
            ObjectKind::TableComposite => "table",
            ObjectKind::Pole => "pole",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "box" => ObjectKind::Box,
            "cylinder" => ObjectKind::Cylinder,
            "table" | "table-composite" => ObjectKind::TableComposite,
            "pole" => ObjectKind::Pole,
            _ => return Err(invalid_arg(format!("unknown object kind `{s}`"))),
        })
    }

    pub const ALL: [ObjectKind; 4] = [
        ObjectKind::Box,
        ObjectKind::Cylinder,
        ObjectKind::TableComposite,
        ObjectKind::Pole,
    ];
}

/// Object family with per-dimension ranges `[lo, hi]` (meters).
///
/// Dimensions: box `(depth x, width y, height z)`, cylinder `(radius, -,
/// height)`, table `(depth, width, height)`, pole `(radius, -, height)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectSpec {
    pub kind: ObjectKind,
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl ObjectSpec {
    pub fn default_for(kind: ObjectKind) -> Self {
        let (lo, hi) = match kind {
            ObjectKind::Box => ([0.30, 0.30, 0.75], [0.55, 0.60, 1.05]),
            ObjectKind::Cylinder => ([0.15, 0.0, 0.75], [0.28, 0.0, 1.05]),
            ObjectKind::TableComposite => ([0.50, 0.60, 0.75], [0.75, 0.95, 0.90]),
            ObjectKind::Pole => ([0.02, 0.0, 1.60], [0.035, 0.0, 2.0]),
        };
        Self { kind, lo, hi }
    }

    /// Spec whose range collapses to one instance.
    pub fn fixed(instance: ObjectInstance) -> Self {
        Self {
            kind: instance.kind,
            lo: instance.dims,
            hi: instance.dims,
        }
    }

    pub fn instantiate(&self, rng: &mut Rng) -> ObjectInstance {
        let mut dims = [0.0; 3];
        for a in 0..3 {
            dims[a] = if self.hi[a] > self.lo[a] {
                rng.gen_range(self.lo[a]..=self.hi[a])
            } else {
                self.lo[a]
            };
        }
        ObjectInstance {
            kind: self.kind,
            dims: dims.map(super::quantize_scalar),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectInstance {
    pub kind: ObjectKind,
    pub dims: [f64; 3],
}

#[derive(Clone, Copy, Debug)]
pub enum Primitive {
    /// Axis-aligned box given by center and half extents.
    Box { center: Vec3, half: Vec3 },
    /// Vertical cylinder over `[z0, z1]`.
    Cylinder { cx: f64, cy: f64, r: f64, z0: f64, z1: f64 },
}

impl Primitive {
    pub fn sdf(&self, p: Vec3) -> f64 {
        match *self {
            Primitive::Box { center, half } => {
                let q = p - center;
                let d = Vec3::new(q.x.abs() - half.x, q.y.abs() - half.y, q.z.abs() - half.z);
                let outside = Vec3::new(d.x.max(0.0), d.y.max(0.0), d.z.max(0.0)).norm();
                outside + d.x.max(d.y).max(d.z).min(0.0)
            }
            Primitive::Cylinder { cx, cy, r, z0, z1 } => {
                let radial = ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt() - r;
                let mid = 0.5 * (z0 + z1);
                let axial = (p.z - mid).abs() - 0.5 * (z1 - z0);
                let outside = (radial.max(0.0).powi(2) + axial.max(0.0).powi(2)).sqrt();
                outside + radial.max(axial).min(0.0)
            }
        }
    }

    fn area(&self) -> f64 {
        match *self {
            Primitive::Box { half, .. } => {
                8.0 * (half.x * half.y + half.y * half.z + half.x * half.z)
            }
            Primitive::Cylinder { r, z0, z1, .. } => {
                2.0 * std::f64::consts::PI * r * (z1 - z0) + 2.0 * std::f64::consts::PI * r * r
            }
        }
    }

    fn sample_surface(&self, rng: &mut Rng) -> Vec3 {
        match *self {
            Primitive::Box { center, half } => {
                let areas = [half.y * half.z, half.x * half.z, half.x * half.y];
                let total: f64 = areas.iter().sum();
                let mut pick = rng.gen::<f64>() * total;
                let mut axis = 2;
                for (a, &w) in areas.iter().enumerate() {
                    if pick < w {
                        axis = a;
                        break;
                    }
                    pick -= w;
                }
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let mut q = [
                    rng.gen_range(-half.x..=half.x),
                    rng.gen_range(-half.y..=half.y),
                    rng.gen_range(-half.z..=half.z),
                ];
                q[axis] = sign * half.to_array()[axis];
                center + Vec3::from_array(q)
            }
            Primitive::Cylinder { cx, cy, r, z0, z1 } => {
                let side = r * (z1 - z0);
                let caps = r * r;
                let phi = rng.gen_range(0.0..std::f64::consts::TAU);
                if rng.gen::<f64>() * (side + caps) < side {
                    Vec3::new(cx + r * phi.cos(), cy + r * phi.sin(), rng.gen_range(z0..=z1))
                } else {
                    let rr = r * rng.gen::<f64>().sqrt();
                    let z = if rng.gen::<bool>() { z1 } else { z0 };
                    Vec3::new(cx + rr * phi.cos(), cy + rr * phi.sin(), z)
                }
            }
        }
    }
}

pub const TABLE_TOP_THICKNESS: f64 = 0.04;
pub const TABLE_LEG_RADIUS: f64 = 0.025;

/// Analytic object shape in its floor frame.
#[derive(Clone, Debug)]
pub struct ObjectShape {
    pub instance: ObjectInstance,
    pub parts: Vec<Primitive>,
}

impl ObjectShape {
    pub fn new(instance: ObjectInstance) -> Self {
        let [a, b, h] = instance.dims;
        let parts = match instance.kind {
            ObjectKind::Box => vec![Primitive::Box {
                center: Vec3::new(0.0, 0.0, h / 2.0),
                half: Vec3::new(a / 2.0, b / 2.0, h / 2.0),
            }],
            ObjectKind::Cylinder | ObjectKind::Pole => vec![Primitive::Cylinder {
                cx: 0.0,
                cy: 0.0,
                r: a,
                z0: 0.0,
                z1: h,
            }],
            ObjectKind::TableComposite => {
                let t = TABLE_TOP_THICKNESS;
                let mut parts = vec![Primitive::Box {
                    center: Vec3::new(0.0, 0.0, h - t / 2.0),
                    half: Vec3::new(a / 2.0, b / 2.0, t / 2.0),
                }];
                let inset = 0.06;
                for sx in [-1.0, 1.0] {
                    for sy in [-1.0, 1.0] {
                        parts.push(Primitive::Cylinder {
                            cx: sx * (a / 2.0 - inset),
                            cy: sy * (b / 2.0 - inset),
                            r: TABLE_LEG_RADIUS,
                            z0: 0.0,
                            z1: h - t,
                        });
                    }
                }
                parts
            }
        };
        Self { instance, parts }
    }

    pub fn sdf(&self, p: Vec3) -> f64 {
        self.parts
            .iter()
            .map(|s| s.sdf(p))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn height(&self) -> f64 {
        self.instance.dims[2]
    }

    /// Half extents of the footprint along x and y.
    pub fn half_footprint(&self) -> (f64, f64) {
        let [a, b, _] = self.instance.dims;
        match self.instance.kind {
            ObjectKind::Box | ObjectKind::TableComposite => (a / 2.0, b / 2.0),
            ObjectKind::Cylinder | ObjectKind::Pole => (a, a),
        }
    }

    /// Rotates the footprint by a multiple of 90 degrees about z.
    pub fn quarter_turned(&self, quarters: u32) -> ObjectShape {
        let mut inst = self.instance;
        let boxy = matches!(inst.kind, ObjectKind::Box | ObjectKind::TableComposite);
        if boxy && quarters % 2 == 1 {
            inst.dims.swap(0, 1);
        }
        ObjectShape::new(inst)
    }

    /// `n` surface points: dense area-weighted samples from a seed derived
    /// from the instance itself, reduced by FPS.
    pub fn point_cloud(&self, n: usize) -> Result<PointCloud> {
        let mut seed = splitmix64(self.instance.kind as u64 + 1);
        for d in self.instance.dims {
            seed = splitmix64(seed ^ d.to_bits());
        }
        let mut rng = Rng::seed_from_u64(seed);
        let areas: Vec<f64> = self.parts.iter().map(|p| p.area()).collect();
        let total: f64 = areas.iter().sum();
        let dense_n = (n * 8).max(64);
        let mut dense = Vec::with_capacity(dense_n);
        while dense.len() < dense_n {
            let mut pick = rng.gen::<f64>() * total;
            let mut which = areas.len() - 1;
            for (i, &a) in areas.iter().enumerate() {
                if pick < a {
                    which = i;
                    break;
                }
                pick -= a;
            }
            let p = self.parts[which].sample_surface(&mut rng);
            // drop samples buried inside another part of the union
            if self.sdf(p) > -1e-9 {
                dense.push(super::quantize(p));
            }
        }
        let dense = PointCloud::new(dense, FrameTag::Raw)?;
        let idx = fps_sample(&dense, n, 0)?;
        dense.select(&idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampled_points_lie_on_surface() {
        for kind in ObjectKind::ALL {
            let inst = ObjectSpec::default_for(kind).instantiate(&mut Rng::seed_from_u64(3));
            let shape = ObjectShape::new(inst);
            let pc = shape.point_cloud(128).unwrap();
            assert_eq!(pc.len(), 128);
            for p in pc.points() {
                assert!(shape.sdf(*p).abs() < 1e-5, "{kind:?} {p:?} {}", shape.sdf(*p));
            }
        }
    }

    #[test]
    fn same_instance_same_cloud() {
        let inst = ObjectSpec::default_for(ObjectKind::Box).instantiate(&mut Rng::seed_from_u64(9));
        let a = ObjectShape::new(inst).point_cloud(64).unwrap();
        let b = ObjectShape::new(inst).point_cloud(64).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn box_sdf_signs() {
        let s = ObjectShape::new(ObjectInstance {
            kind: ObjectKind::Box,
            dims: [1.0, 1.0, 1.0],
        });
        assert!((s.sdf(Vec3::new(0.0, 0.0, 0.5)) + 0.5).abs() < 1e-12);
        assert!((s.sdf(Vec3::new(1.0, 0.0, 0.5)) - 0.5).abs() < 1e-12);
    }
}

//! Small fixed-size linear algebra generic over a scalar type, so the same
//! kinematics code runs on `f64` and on the reverse-mode [`crate::fitting::ad::Var`].

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

pub trait Real:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Mul<f64, Output = Self>
{
    fn cst(v: f64) -> Self;
    fn value(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }
    fn one() -> Self {
        Self::cst(1.0)
    }
    fn square(self) -> Self {
        self * self
    }
}

impl Real for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn value(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct V3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

pub type Vec3 = V3<f64>;

impl<T: Copy> V3<T> {
    pub const fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [T; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn get(self, axis: usize) -> T {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }
}

impl<T: Real> V3<T> {
    pub fn zeros() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn splat(v: T) -> Self {
        Self::new(v, v, v)
    }

    pub fn lift(v: Vec3) -> Self {
        Self::new(T::cst(v.x), T::cst(v.y), T::cst(v.z))
    }

    pub fn values(self) -> Vec3 {
        Vec3::new(self.x.value(), self.y.value(), self.z.value())
    }

    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_squared(self) -> T {
        self.dot(self)
    }

    pub fn norm(self) -> T {
        self.norm_squared().sqrt()
    }

    pub fn scale(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn mul_elem(self, o: Self) -> Self {
        Self::new(self.x * o.x, self.y * o.y, self.z * o.z)
    }
}

impl Vec3 {
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        self.scale(1.0 / n)
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }
}

impl<T: Real> Add for V3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> AddAssign for V3<T> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Real> Sub for V3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> Neg for V3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl<T: Real> Mul<f64> for V3<T> {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Row-major 3x3 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat3<T> {
    pub m: [[T; 3]; 3],
}

pub type Matrix3 = Mat3<f64>;

impl<T: Real> Mat3<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Self {
            m: [[o, z, z], [z, o, z], [z, z, o]],
        }
    }

    pub fn lift(m: Matrix3) -> Self {
        let mut out = Self::identity();
        for r in 0..3 {
            for c in 0..3 {
                out.m[r][c] = T::cst(m.m[r][c]);
            }
        }
        out
    }

    pub fn values(&self) -> Matrix3 {
        let mut out = Matrix3::identity();
        for r in 0..3 {
            for c in 0..3 {
                out.m[r][c] = self.m[r][c].value();
            }
        }
        out
    }

    pub fn mul_vec(&self, v: V3<T>) -> V3<T> {
        let m = &self.m;
        V3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    pub fn mul_mat(&self, o: &Self) -> Self {
        let mut out = Self::identity();
        for r in 0..3 {
            for c in 0..3 {
                out.m[r][c] =
                    self.m[r][0] * o.m[0][c] + self.m[r][1] * o.m[1][c] + self.m[r][2] * o.m[2][c];
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut out = *self;
        for r in 0..3 {
            for c in 0..3 {
                out.m[r][c] = self.m[c][r];
            }
        }
        out
    }

    pub fn from_columns(a: V3<T>, b: V3<T>, c: V3<T>) -> Self {
        Self {
            m: [[a.x, b.x, c.x], [a.y, b.y, c.y], [a.z, b.z, c.z]],
        }
    }

    /// Exponential map of an axis-angle vector (Rodrigues). Uses Taylor
    /// expansions near zero so the derivative stays finite at the identity.
    pub fn exp_so3(w: V3<T>) -> Self {
        let th2 = w.norm_squared();
        let t2 = th2.value();
        let (a, b) = if t2 < 1e-8 {
            // sin(t)/t and (1-cos t)/t^2
            (
                T::one() - th2 * (1.0 / 6.0) + th2 * th2 * (1.0 / 120.0),
                T::cst(0.5) - th2 * (1.0 / 24.0) + th2 * th2 * (1.0 / 720.0),
            )
        } else {
            let th = th2.sqrt();
            (th.sin() / th, (T::one() - th.cos()) / th2)
        };
        let k = Self::skew(w);
        let k2 = k.mul_mat(&k);
        let mut out = Self::identity();
        for r in 0..3 {
            for c in 0..3 {
                out.m[r][c] = out.m[r][c] + a * k.m[r][c] + b * k2.m[r][c];
            }
        }
        out
    }

    pub fn skew(w: V3<T>) -> Self {
        let z = T::zero();
        Self {
            m: [[z, -w.z, w.y], [w.z, z, -w.x], [-w.y, w.x, z]],
        }
    }
}

impl Matrix3 {
    /// Logarithm map back to an axis-angle vector.
    pub fn log_so3(&self) -> Vec3 {
        let m = &self.m;
        let tr = m[0][0] + m[1][1] + m[2][2];
        let cos = ((tr - 1.0) * 0.5).clamp(-1.0, 1.0);
        let th = cos.acos();
        let v = Vec3::new(m[2][1] - m[1][2], m[0][2] - m[2][0], m[1][0] - m[0][1]);
        if th < 1e-7 {
            return v * 0.5;
        }
        if std::f64::consts::PI - th < 1e-6 {
            // near pi: axis from the diagonal of (R + I) / 2
            let mut axis = Vec3::new(
                ((m[0][0] + 1.0) * 0.5).max(0.0).sqrt(),
                ((m[1][1] + 1.0) * 0.5).max(0.0).sqrt(),
                ((m[2][2] + 1.0) * 0.5).max(0.0).sqrt(),
            );
            if m[0][1] + m[1][0] < 0.0 {
                axis.y = -axis.y;
            }
            if m[0][2] + m[2][0] < 0.0 {
                axis.z = -axis.z;
            }
            return axis.normalized() * th;
        }
        v * (th / (2.0 * th.sin()))
    }

    /// Minimal rotation taking unit vector `a` onto unit vector `b`.
    pub fn rotation_between(a: Vec3, b: Vec3) -> Matrix3 {
        let axis = a.cross(b);
        let s = axis.norm();
        let c = a.dot(b);
        if s < 1e-12 {
            if c > 0.0 {
                return Matrix3::identity();
            }
            let helper = if a.x.abs() < 0.9 {
                Vec3::new(1.0, 0.0, 0.0)
            } else {
                Vec3::new(0.0, 1.0, 0.0)
            };
            let perp = a.cross(helper).normalized();
            return Matrix3::exp_so3(perp * std::f64::consts::PI);
        }
        Matrix3::exp_so3(axis * (s.atan2(c) / s))
    }

    pub fn rot_z(angle: f64) -> Matrix3 {
        let (s, c) = angle.sin_cos();
        Matrix3 {
            m: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_log_round_trip() {
        for w in [
            Vec3::new(0.3, -0.2, 0.9),
            Vec3::new(1e-9, 0.0, 0.0),
            Vec3::new(0.0, 3.0, 0.0),
        ] {
            let r = Matrix3::exp_so3(w);
            let back = r.log_so3();
            assert!((back - w).norm() < 1e-6, "{w:?} -> {back:?}");
        }
    }

    #[test]
    fn rotation_between_maps_a_to_b() {
        let a = Vec3::new(0.0, 1.0, 0.0);
        for b in [
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, -1.0, 0.0),
            Vec3::new(0.6, 0.0, 0.8),
        ] {
            let r = Matrix3::rotation_between(a, b);
            assert!((r.mul_vec(a) - b).norm() < 1e-12);
        }
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// Below this |dot| margin slerp degrades to normalized lerp.
const SLERP_LINEAR_MARGIN: f64 = 1e-7;

/// Unit quaternion `w + xi + yj + zk`, serialized as `[w, x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl From<[f64; 4]> for Quat {
    fn from(a: [f64; 4]) -> Self {
        Quat::new(a[0], a[1], a[2], a[3])
    }
}

impl From<Quat> for [f64; 4] {
    fn from(q: Quat) -> Self {
        [q.w, q.x, q.y, q.z]
    }
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    /// Rotation of `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let n = norm3(axis);
        if n == 0.0 {
            return Quat::IDENTITY;
        }
        let (s, c) = (angle * 0.5).sin_cos();
        Quat::new(c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n)
    }

    /// Pure rotation about +Y.
    pub fn from_yaw(yaw: f64) -> Self {
        let (s, c) = (yaw * 0.5).sin_cos();
        Quat::new(c, 0.0, s, 0.0)
    }

    pub fn dot(&self, o: &Quat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Unit-norm copy. The zero quaternion maps to identity.
    pub fn normalized(&self) -> Quat {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Quat::IDENTITY;
        }
        Quat::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    /// Representative with `w >= 0`.
    pub fn canonical(&self) -> Quat {
        if self.w < 0.0 {
            self.neg()
        } else {
            *self
        }
    }

    pub fn neg(&self) -> Quat {
        Quat::new(-self.w, -self.x, -self.y, -self.z)
    }

    pub fn conjugate(&self) -> Quat {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Hamilton product `self * o`.
    pub fn mul(&self, o: &Quat) -> Quat {
        Quat::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }

    pub fn rotate(&self, v: Vec3) -> Vec3 {
        let m = self.to_matrix();
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    /// Row-major rotation matrix of the normalized quaternion.
    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        let q = self.normalized();
        let (w, x, y, z) = (q.w, q.x, q.y, q.z);
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ]
    }

    /// Shepperd's method; result is canonical (`w >= 0`).
    pub fn from_matrix(m: &[[f64; 3]; 3]) -> Quat {
        let tr = m[0][0] + m[1][1] + m[2][2];
        let q = if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            Quat::new(0.25 * s, (m[2][1] - m[1][2]) / s, (m[0][2] - m[2][0]) / s, (m[1][0] - m[0][1]) / s)
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
            Quat::new((m[2][1] - m[1][2]) / s, 0.25 * s, (m[0][1] + m[1][0]) / s, (m[0][2] + m[2][0]) / s)
        } else if m[1][1] > m[2][2] {
            let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
            Quat::new((m[0][2] - m[2][0]) / s, (m[0][1] + m[1][0]) / s, 0.25 * s, (m[1][2] + m[2][1]) / s)
        } else {
            let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
            Quat::new((m[1][0] - m[0][1]) / s, (m[0][2] + m[2][0]) / s, (m[1][2] + m[2][1]) / s, 0.25 * s)
        };
        q.normalized().canonical()
    }

    /// Rotation angle between two orientations, in `[0, pi]`.
    pub fn angle_to(&self, o: &Quat) -> f64 {
        let d = self.normalized().dot(&o.normalized()).abs().min(1.0);
        2.0 * d.acos()
    }

    /// Heading about +Y: the angle that takes +Z to the XZ projection of the
    /// rotated +Z axis.
    pub fn yaw(&self) -> f64 {
        let f = self.rotate([0.0, 0.0, 1.0]);
        f[0].atan2(f[2])
    }

    /// First two columns of the rotation matrix, `(c0, c1)` flattened.
    pub fn to_6d(&self) -> [f64; 6] {
        let m = self.to_matrix();
        [m[0][0], m[1][0], m[2][0], m[0][1], m[1][1], m[2][1]]
    }

    /// Inverse of [`Quat::to_6d`]: Gram-Schmidt on the two columns, third
    /// column from their cross product.
    pub fn from_6d(v: &[f64]) -> Result<Quat> {
        if v.len() != 6 {
            return Err(Error::invalid(format!("6D rotation needs 6 values, got {}", v.len())));
        }
        let a1 = [v[0], v[1], v[2]];
        let a2 = [v[3], v[4], v[5]];
        let n1 = norm3(a1);
        if !(n1 > 1e-9) {
            return Err(Error::invalid("degenerate 6D rotation: zero first column"));
        }
        let b1 = scale3(a1, 1.0 / n1);
        let d = dot3(b1, a2);
        let r = sub3(a2, scale3(b1, d));
        let n2 = norm3(r);
        if !(n2 > 1e-9 * norm3(a2).max(1.0)) {
            return Err(Error::invalid("degenerate 6D rotation: parallel columns"));
        }
        let b2 = scale3(r, 1.0 / n2);
        let b3 = cross3(b1, b2);
        let m = [[b1[0], b2[0], b3[0]], [b1[1], b2[1], b3[1]], [b1[2], b2[2], b3[2]]];
        Ok(Quat::from_matrix(&m))
    }
}

/// Spherical linear interpolation along the shorter arc.
pub fn slerp(q0: &Quat, q1: &Quat, u: f64) -> Quat {
    let a = q0.normalized();
    let mut b = q1.normalized();
    let mut d = a.dot(&b);
    if d < 0.0 {
        b = b.neg();
        d = -d;
    }
    if d > 1.0 - SLERP_LINEAR_MARGIN {
        return Quat::new(
            a.w + u * (b.w - a.w),
            a.x + u * (b.x - a.x),
            a.y + u * (b.y - a.y),
            a.z + u * (b.z - a.z),
        )
        .normalized();
    }
    let theta = d.min(1.0).acos();
    let s = theta.sin();
    let k0 = ((1.0 - u) * theta).sin() / s;
    let k1 = (u * theta).sin() / s;
    Quat::new(
        k0 * a.w + k1 * b.w,
        k0 * a.x + k1 * b.x,
        k0 * a.y + k1 * b.y,
        k0 * a.z + k1 * b.z,
    )
    .normalized()
}

pub(crate) fn norm3(v: Vec3) -> f64 {
    dot3(v, v).sqrt()
}

pub(crate) fn dot3(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn add3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn sub3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn scale3(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub(crate) fn cross3(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Rotate `v` about +Y by `yaw` radians.
pub(crate) fn rotate_yaw(v: Vec3, yaw: f64) -> Vec3 {
    let (s, c) = yaw.sin_cos();
    [c * v[0] + s * v[2], v[1], -s * v[0] + c * v[2]]
}

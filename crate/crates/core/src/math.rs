//! Small rigid-transform and SO(3) helpers shared by kinematics and the optimizer.

use nalgebra::{Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Mat4 = Matrix4<f64>;

/// Rotation + translation with unit scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub rot: Mat3,
    pub pos: Vec3,
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        rot: Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0),
        pos: Vector3::new(0.0, 0.0, 0.0),
    };

    pub fn new(rot: Mat3, pos: Vec3) -> Self {
        Self { rot, pos }
    }

    pub fn from_matrix4(m: &Mat4) -> Self {
        Self {
            rot: m.fixed_view::<3, 3>(0, 0).into_owned(),
            pos: m.fixed_view::<3, 1>(0, 3).into_owned(),
        }
    }

    pub fn to_matrix4(&self) -> Mat4 {
        let mut m = Mat4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rot);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.pos);
        m
    }

    /// Inverse assuming an orthonormal rotation block.
    pub fn inverse(&self) -> Self {
        let rt = self.rot.transpose();
        Self {
            rot: rt,
            pos: -(rt * self.pos),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rot * p + self.pos
    }
}

impl std::ops::Mul for Transform {
    type Output = Transform;

    fn mul(self, rhs: Transform) -> Transform {
        Transform {
            rot: self.rot * rhs.rot,
            pos: self.rot * rhs.pos + self.pos,
        }
    }
}

pub fn skew(v: &Vec3) -> Mat3 {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// `vee(M - Mᵀ)`: the axial vector `w` with `<M, [v]x>_F = w · v`.
pub fn skew_pairing(m: &Mat3) -> Vec3 {
    Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)])
}

/// Exponential map of an axis-angle vector.
pub fn exp_so3(w: &Vec3) -> Mat3 {
    Rotation3::new(*w).into_inner()
}

/// Right Jacobian of the SO(3) exponential: `Exp(w + dw) ≈ Exp(w) Exp(Jr(w) dw)`.
pub fn right_jacobian(w: &Vec3) -> Mat3 {
    let theta2 = w.norm_squared();
    let k = skew(w);
    if theta2 < 1e-10 {
        return Mat3::identity() - 0.5 * k + (k * k) / 6.0;
    }
    let theta = theta2.sqrt();
    let a = (1.0 - theta.cos()) / theta2;
    let b = (theta - theta.sin()) / (theta2 * theta);
    Mat3::identity() - a * k + b * (k * k)
}

/// Re-orthonormalize a nearly orthonormal matrix.
pub fn orthonormalize(m: &Mat3) -> Mat3 {
    Rotation3::from_matrix(m).into_inner()
}

pub fn quat_to_mat(q: &UnitQuaternion<f64>) -> Mat3 {
    q.to_rotation_matrix().into_inner()
}

pub fn mat_to_quat(m: &Mat3) -> UnitQuaternion<f64> {
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*m))
}

/// Geodesic angle between two rotation matrices.
pub fn rotation_angle_between(a: &Mat3, b: &Mat3) -> f64 {
    let r = a.transpose() * b;
    let c = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    // acos loses precision near 0; use the skew part for small angles.
    let s = skew_pairing(&r).norm() * 0.5;
    s.atan2(c)
}

/// Smallest rotation taking direction `from` onto direction `to`.
pub fn shortest_arc(from: &Vec3, to: &Vec3) -> Mat3 {
    match UnitQuaternion::rotation_between(from, to) {
        Some(q) => quat_to_mat(&q),
        None => {
            // antiparallel: rotate by pi about any axis orthogonal to `from`
            let f = from.normalize();
            let helper = if f.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
            let axis = f.cross(&helper).normalize();
            exp_so3(&(axis * std::f64::consts::PI))
        }
    }
}

/// Fraction `t` of rotation `r` (slerp from identity).
pub fn fractional_rotation(r: &Mat3, t: f64) -> Mat3 {
    let q = mat_to_quat(r);
    quat_to_mat(&UnitQuaternion::identity().slerp(&q, t))
}

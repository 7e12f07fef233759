//! Rigid transforms, fixed-axis Euler angles and gravity alignment.
//!
//! Every frame in the wrist chain (wrist in camera, camera in first camera,
//! first camera in world, world in robot) is a [`RigidTransform`]. Rotations
//! are stored as 3x3 matrices; quaternions only appear at file boundaries.
//!
//! Euler angles use one convention throughout the crate: fixed-axis
//! (extrinsic) roll about X, then pitch about Y, then yaw about Z, i.e.
//! `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.

use std::f64::consts::FRAC_PI_2;
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Vectors shorter than this are rejected before angle extraction.
pub const ZERO_VECTOR_EPS: f64 = 1e-12;

/// Tolerance on quaternion norm when loading transforms.
pub const QUATERNION_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("vector magnitude {0:e} is below the zero-vector threshold")]
    ZeroVector(f64),
    #[error("quaternion norm {0} is not within 1e-6 of 1")]
    NonUnitQuaternion(f64),
    #[error("rotation matrix is not orthonormal with det +1 (deviation {0:e})")]
    NotARotation(f64),
    #[error("non-finite value in transform")]
    NonFinite,
}

/// SE(3) pose: `p_parent = rotation * p_child + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform, checking that `rotation` is a proper rotation
    /// within `1e-9`.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let t = Self { rotation, translation };
        t.check(1e-9)?;
        Ok(t)
    }

    /// Builds a transform without validating the rotation. Callers must
    /// guarantee orthonormality.
    pub fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn from_rotation(rotation: Matrix3<f64>) -> Self {
        Self {
            rotation,
            translation: Vector3::zeros(),
        }
    }

    /// `self` applied after `other` (matrix product `self * other`).
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Largest absolute deviation of `RᵀR` from identity, combined with the
    /// deviation of `det R` from `+1`.
    pub fn rotation_error(&self) -> f64 {
        let ortho = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        let det = (self.rotation.determinant() - 1.0).abs();
        ortho.max(det)
    }

    pub fn check(&self, tol: f64) -> Result<(), GeometryError> {
        if !self.rotation.iter().chain(self.translation.iter()).all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let err = self.rotation_error();
        if err > tol {
            return Err(GeometryError::NotARotation(err));
        }
        Ok(())
    }

    /// Unit quaternion `[w, x, y, z]` of the rotation part.
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = UnitQuaternion::from_matrix(&self.rotation);
        let q = if q.w < 0.0 { -q.into_inner() } else { q.into_inner() };
        [q.w, q.i, q.j, q.k]
    }

    /// Builds a transform from a translation and a `[w, x, y, z]` quaternion,
    /// rejecting quaternions whose norm differs from 1 by more than `1e-6`.
    pub fn from_quaternion_wxyz(t: [f64; 3], q: [f64; 4]) -> Result<Self, GeometryError> {
        if !t.iter().chain(q.iter()).all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        let norm = quat.norm();
        if (norm - 1.0).abs() > QUATERNION_NORM_TOL {
            return Err(GeometryError::NonUnitQuaternion(norm));
        }
        let unit = UnitQuaternion::from_quaternion(quat);
        Ok(Self {
            rotation: unit.to_rotation_matrix().into_inner(),
            translation: Vector3::new(t[0], t[1], t[2]),
        })
    }

    pub fn rpy(&self) -> EulerFixedRPY {
        EulerFixedRPY::from_matrix(&self.rotation)
    }
}

impl Mul for RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.compose(&rhs)
    }
}

impl<'a> Mul<&'a RigidTransform> for &'a RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: &RigidTransform) -> RigidTransform {
        self.compose(rhs)
    }
}

/// File representation: `{"t": [x, y, z], "q": [w, x, y, z]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformJson {
    pub t: [f64; 3],
    pub q: [f64; 4],
}

impl From<&RigidTransform> for TransformJson {
    fn from(t: &RigidTransform) -> Self {
        TransformJson {
            t: [t.translation.x, t.translation.y, t.translation.z],
            q: t.quaternion_wxyz(),
        }
    }
}

impl TryFrom<TransformJson> for RigidTransform {
    type Error = GeometryError;

    fn try_from(j: TransformJson) -> Result<Self, GeometryError> {
        RigidTransform::from_quaternion_wxyz(j.t, j.q)
    }
}

impl Serialize for RigidTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        TransformJson::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let j = TransformJson::deserialize(d)?;
        RigidTransform::try_from(j).map_err(serde::de::Error::custom)
    }
}

/// Fixed-axis roll/pitch/yaw in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerFixedRPY {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl EulerFixedRPY {
    pub fn new(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self { roll, pitch, yaw }
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        rot_z(self.yaw) * rot_y(self.pitch) * rot_x(self.roll)
    }

    /// Recovers angles from a rotation matrix. Pitch is in `[-π/2, π/2]`;
    /// at the gimbal lock, yaw absorbs the whole in-plane angle.
    pub fn from_matrix(r: &Matrix3<f64>) -> Self {
        let sp = (-r[(2, 0)]).clamp(-1.0, 1.0);
        let pitch = sp.asin();
        if sp.abs() < 1.0 - 1e-12 {
            let roll = r[(2, 1)].atan2(r[(2, 2)]);
            let yaw = r[(1, 0)].atan2(r[(0, 0)]);
            Self { roll, pitch, yaw }
        } else {
            let yaw = (-r[(0, 1)]).atan2(r[(1, 1)]);
            Self { roll: 0.0, pitch, yaw }
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.roll, self.pitch, self.yaw]
    }
}

pub fn rot_x(a: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Vector3::x_axis(), a).into_inner()
}

pub fn rot_y(a: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Vector3::y_axis(), a).into_inner()
}

pub fn rot_z(a: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Vector3::z_axis(), a).into_inner()
}

/// Rotation about an arbitrary unit axis (Rodrigues).
pub fn rot_axis(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let k = axis;
    let (s, c) = angle.sin_cos();
    let kx = k.cross_matrix();
    Matrix3::identity() + kx * s + kx * kx * (1.0 - c)
}

/// Geodesic angle between two rotations, in radians.
pub fn rotation_angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let cos = (((a.transpose() * b).trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    cos.acos()
}

/// Nearest rotation matrix in the Frobenius sense (polar decomposition).
pub fn project_to_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let vt = svd.v_t.expect("svd v_t");
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut d = Matrix3::identity();
        d[(2, 2)] = -1.0;
        r = u * d * vt;
    }
    r
}

/// Accelerometer reading, or any vector pointing "up" (e.g. a surface
/// normal), in the accelerometer frame: z up, y from the lens into the
/// screen, x to the left when looking at the screen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccelSample {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl AccelSample {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn norm(&self) -> f64 {
        self.as_vector().norm()
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    fn checked(&self) -> Result<(), GeometryError> {
        let n = self.norm();
        if !n.is_finite() || n < ZERO_VECTOR_EPS {
            return Err(GeometryError::ZeroVector(n));
        }
        Ok(())
    }
}

/// `atan(x / sqrt(y² + z²))`, in `[-π/2, π/2]`.
pub fn pitch_from_accel(a: AccelSample) -> Result<f64, GeometryError> {
    a.checked()?;
    Ok(a.x.atan2(a.y.hypot(a.z)))
}

/// `atan(y / sqrt(x² + z²))`, in `[-π/2, π/2]`.
pub fn roll_from_accel(a: AccelSample) -> Result<f64, GeometryError> {
    a.checked()?;
    Ok(a.y.atan2(a.x.hypot(a.z)))
}

/// Angle of the accelerometer z axis from upright, `atan(sqrt(x² + y²) / z)`.
///
/// Diagnostic only; it carries no azimuth and is never used to reorient frames.
pub fn theta_from_accel(a: AccelSample) -> Result<f64, GeometryError> {
    a.checked()?;
    Ok(a.x.hypot(a.y).atan2(a.z))
}

/// Leveling angles for a gravity reading, as fixed-axis RPY with zero yaw.
///
/// The pitch slot is `-pitch_from_accel(a)`. The roll slot is the rotation
/// about x that removes the remaining tilt once pitch is undone; it equals
/// `roll_from_accel(a)` whenever the pitch is zero. Applying the resulting
/// rotation to `a` yields a vector along `+z`.
pub fn upright_rpy(a: AccelSample) -> Result<EulerFixedRPY, GeometryError> {
    let pitch = pitch_from_accel(a)?;
    let roll = roll_from_accel(a)?;
    // sin(roll) = y/|a| and cos(pitch) = sqrt(y² + z²)/|a|; their ratio is the
    // sine of the residual roll about x, with the cosine given by z.
    let yz = a.y.hypot(a.z);
    let level_roll = if yz == 0.0 { 0.0 } else { roll.sin().atan2(pitch.cos() * a.z / yz) };
    Ok(EulerFixedRPY::new(level_roll, -pitch, 0.0))
}

/// Rotation that levels the accelerometer frame: applied to `a / |a|` it
/// gives `(0, 0, 1)`. Yaw is zero since it is unobservable from gravity.
pub fn upright_from_accel(a: AccelSample) -> Result<RigidTransform, GeometryError> {
    let rpy = upright_rpy(a)?;
    Ok(RigidTransform::from_rotation(rpy.to_matrix()))
}

/// Axis permutation taking accelerometer-frame vectors to the camera frame
/// (x right, y down, z out of the lens).
pub fn accel_to_camera() -> Matrix3<f64> {
    Matrix3::new(
        -1.0, 0.0, 0.0, //
        0.0, 0.0, -1.0, //
        0.0, -1.0, 0.0,
    )
}

/// First-camera-to-world transform (`M^{C1}_{World}`) for a gravity reading.
///
/// The world frame shares the camera axis convention but is level: world
/// `-y` is up. The leveling rotation is computed in the accelerometer frame
/// and conjugated into camera axes.
pub fn camera_in_world_from_accel(a: AccelSample) -> Result<RigidTransform, GeometryError> {
    let level = upright_from_accel(a)?.rotation;
    let p = accel_to_camera();
    Ok(RigidTransform::from_rotation(p * level * p.transpose()))
}

/// World-to-robot rotation, fixed-axis `[-π/2, 0, -π/2]`.
///
/// Maps the camera-convention world (z forward, x right, y down) onto the
/// robot frame (x out to the table, y left, z up).
pub fn world_to_robot() -> RigidTransform {
    RigidTransform::from_rotation(EulerFixedRPY::new(-FRAC_PI_2, 0.0, -FRAC_PI_2).to_matrix())
}

//! Rigid-body and pinhole camera primitives.
//!
//! Poses map world coordinates into the camera frame (`x_cam = R * x_world + t`).
//! Tangent-space increments are applied on the left: `T <- exp(delta) * T`.

use std::ops::Mul;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};

use crate::error::GeometryError;

/// Quaternions whose norm is within this distance of one are stored as given.
pub const QUATERNION_NORM_TOLERANCE: f64 = 1e-9;

/// Camera-frame depths at or below this are treated as behind the camera.
pub const MIN_DEPTH: f64 = 1e-9;

// Below this rotation angle the cancellation-prone coefficients switch to Taylor series.
const SMALL_ANGLE: f64 = 1e-2;

// log_map refuses rotations this close to a half turn.
const HALF_TURN_MARGIN: f64 = 1e-9;

/// Rigid transform on SE(3), stored as a unit quaternion and a translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose from a quaternion in `(w, x, y, z)` order.
    ///
    /// The quaternion is renormalized unless its norm is already within
    /// [`QUATERNION_NORM_TOLERANCE`] of one, so values that went through a
    /// text round trip keep their printed digits. A zero or non-finite
    /// quaternion is rejected.
    pub fn from_wxyz(
        w: f64,
        x: f64,
        y: f64,
        z: f64,
        translation: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        let q = Quaternion::new(w, x, y, z);
        let norm = q.norm();
        if !norm.is_finite() || norm < 1e-12 || !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidQuaternion { norm });
        }
        let rotation = if (norm - 1.0).abs() <= QUATERNION_NORM_TOLERANCE {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::new_unchecked(q / norm)
        };
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_parts(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: renormalize(rotation.into_inner()),
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation,
        }
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Quaternion coefficients in `(w, x, y, z)` order.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// Rotation angle in `[0, pi]`.
    pub fn rotation_angle(&self) -> f64 {
        let q = self.rotation.quaternion();
        2.0 * q.imag().norm().atan2(q.w.abs())
    }

    pub fn transform_point(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * point + self.translation
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: renormalize(self.rotation.into_inner() * other.rotation.into_inner()),
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose {
            rotation: inv,
            translation: -(inv * self.translation),
        }
    }

    /// Applies a tangent increment on the left: `exp(delta) * self`.
    pub fn retract(&self, delta: &Twist) -> Pose {
        exp_map(delta).compose(self)
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl<'a> Mul<&'a Pose> for &'a Pose {
    type Output = Pose;

    fn mul(self, rhs: &'a Pose) -> Pose {
        self.compose(rhs)
    }
}

fn renormalize(q: Quaternion<f64>) -> UnitQuaternion<f64> {
    let norm = q.norm();
    if (norm - 1.0).abs() <= QUATERNION_NORM_TOLERANCE {
        UnitQuaternion::new_unchecked(q)
    } else {
        UnitQuaternion::new_unchecked(q / norm)
    }
}

/// Tangent coordinates on se(3).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Twist {
    /// Axis-angle rotation (radians).
    pub rotational: Vector3<f64>,
    /// Translational part (meters), expressed before the left Jacobian is applied.
    pub translational: Vector3<f64>,
}

impl Twist {
    pub fn new(rotational: Vector3<f64>, translational: Vector3<f64>) -> Self {
        Self {
            rotational,
            translational,
        }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    /// Packs as `[rx, ry, rz, tx, ty, tz]`.
    pub fn to_array(&self) -> [f64; 6] {
        let (r, t) = (&self.rotational, &self.translational);
        [r.x, r.y, r.z, t.x, t.y, t.z]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            rotational: Vector3::new(v[0], v[1], v[2]),
            translational: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn norm(&self) -> f64 {
        (self.rotational.norm_squared() + self.translational.norm_squared()).sqrt()
    }
}

/// Pinhole intrinsics; no distortion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let finite = [fx, fy, cx, cy].iter().all(|v| v.is_finite());
        if !finite || fx <= 0.0 || fy <= 0.0 || width == 0 || height == 0 {
            return Err(GeometryError::InvalidIntrinsics);
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// True when `pixel` lies in `[0, width-1] x [0, height-1]`.
    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0
            && pixel.y >= 0.0
            && pixel.x <= f64::from(self.width - 1)
            && pixel.y <= f64::from(self.height - 1)
    }

    /// Pixel of a camera-frame point, without the depth check.
    pub fn project_camera_point(&self, pc: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(
            self.fx * pc.x / pc.z + self.cx,
            self.fy * pc.y / pc.z + self.cy,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub pixel: Vector2<f64>,
    pub depth: f64,
}

/// Projects a world point through a world-to-camera pose.
pub fn project(
    intrinsics: &CameraIntrinsics,
    pose: &Pose,
    point: &Vector3<f64>,
) -> Result<Projection, GeometryError> {
    let pc = pose.transform_point(point);
    if pc.z <= MIN_DEPTH {
        return Err(GeometryError::NonPositiveDepth { depth: pc.z });
    }
    Ok(Projection {
        pixel: intrinsics.project_camera_point(&pc),
        depth: pc.z,
    })
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// SE(3) exponential.
///
/// Defined for any rotational magnitude; the round trip through [`log_map`]
/// holds for magnitudes below pi.
pub fn exp_map(xi: &Twist) -> Pose {
    let w = &xi.rotational;
    let theta_sq = w.norm_squared();
    let theta = theta_sq.sqrt();
    let half = 0.5 * theta;
    // sin(theta/2)/theta
    let half_sinc = if theta < 1e-4 {
        0.5 - theta_sq / 48.0 + theta_sq * theta_sq / 3840.0
    } else {
        half.sin() / theta
    };
    let half_cos = half.cos();
    // a = (1 - cos)/theta^2, b = (theta - sin)/theta^3
    let (a, b) = if theta < SMALL_ANGLE {
        let t4 = theta_sq * theta_sq;
        (
            0.5 - theta_sq / 24.0 + t4 / 720.0 - t4 * theta_sq / 40320.0,
            1.0 / 6.0 - theta_sq / 120.0 + t4 / 5040.0 - t4 * theta_sq / 362880.0,
        )
    } else {
        let s_half = half.sin();
        (
            2.0 * s_half * s_half / theta_sq,
            (theta - theta.sin()) / (theta_sq * theta),
        )
    };
    let rotation = renormalize(Quaternion::from_parts(half_cos, w * half_sinc));
    let omega = skew(w);
    let v = Matrix3::identity() + omega * a + omega * omega * b;
    Pose {
        rotation,
        translation: v * xi.translational,
    }
}

/// SE(3) logarithm; inverse of [`exp_map`] for rotation angles below pi.
pub fn log_map(pose: &Pose) -> Result<Twist, GeometryError> {
    let mut q = *pose.rotation.quaternion();
    if q.w < 0.0 {
        q = -q;
    }
    let imag = q.imag();
    let imag_norm = imag.norm();
    let theta = 2.0 * imag_norm.atan2(q.w);
    if theta >= std::f64::consts::PI - HALF_TURN_MARGIN {
        return Err(GeometryError::HalfTurnRotation);
    }
    let theta_sq = theta * theta;
    let w = if imag_norm < 1e-8 {
        // theta / |v| = 2 atan(|v|/w) / |v|
        let r = imag_norm / q.w;
        imag * (2.0 / q.w) * (1.0 - r * r / 3.0)
    } else {
        imag * (theta / imag_norm)
    };
    // V^-1 = I - omega/2 + c * omega^2
    let c = if theta < SMALL_ANGLE {
        let t4 = theta_sq * theta_sq;
        1.0 / 12.0 + theta_sq / 720.0 + t4 / 30240.0 + t4 * theta_sq / 1209600.0
    } else {
        let half = 0.5 * theta;
        (1.0 - half / half.tan()) / theta_sq
    };
    let omega = skew(&w);
    let v_inv = Matrix3::identity() - omega * 0.5 + omega * omega * c;
    Ok(Twist {
        rotational: w,
        translational: v_inv * pose.translation,
    })
}

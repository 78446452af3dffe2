//! Rotations, rigid transforms, and the pinhole + Brown–Conrady camera.
//!
//! Conventions used across the crate:
//! - a [`Pose`] maps points from a source frame into a target frame,
//!   `p_target = R(r) * p_source + t`;
//! - rotations are angle-axis vectors with angle in `[0, π]`;
//! - distortion is applied in normalized image coordinates, before the
//!   pixel mapping.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Default radius (normalized coordinates) beyond which distortion is not trusted.
pub const DEFAULT_VALIDITY_RADIUS: f64 = 1.5;
/// Minimum camera-frame depth accepted by [`CameraModel::project`].
pub const DEFAULT_Z_MIN: f64 = 1e-6;

const UNDISTORT_MAX_ITERS: usize = 50;
const UNDISTORT_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("matrix is not a rotation (orthogonality error {orthogonality:e}, det {det})")]
    NonRotationMatrix { orthogonality: f64, det: f64 },
    #[error("normalized point radius {radius} exceeds validity radius {limit}")]
    OutsideValidityRadius { radius: f64, limit: f64 },
    #[error("undistortion did not converge (residual {residual:e})")]
    NoConvergence { residual: f64 },
    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("non-finite input")]
    NonFinite,
}

fn hat(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues formula. Small angles use a Taylor expansion of the coefficients.
pub fn rotation_from_angle_axis(r: &Vec3) -> Mat3 {
    let theta2 = r.norm_squared();
    let (a, b) = if theta2 < 1e-8 {
        // sin(θ)/θ and (1 - cos θ)/θ² to second order
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let k = hat(r);
    Mat3::identity() + k * a + k * k * b
}

fn check_rotation(m: &Mat3, tol: f64) -> Result<(), GeometryError> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    let orthogonality = (m.transpose() * m - Mat3::identity()).norm();
    let det = m.determinant();
    if orthogonality > tol || (det - 1.0).abs() > tol {
        return Err(GeometryError::NonRotationMatrix { orthogonality, det });
    }
    Ok(())
}

/// Inverse of [`rotation_from_angle_axis`], returning the canonical vector
/// with angle in `[0, π]`. At exactly π the sign is chosen so that the first
/// non-zero component is positive.
pub fn angle_axis_from_rotation(m: &Mat3) -> Result<Vec3, GeometryError> {
    check_rotation(m, 1e-6)?;
    let vee = Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) * 0.5;
    let sin_theta = vee.norm();
    let cos_theta = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = sin_theta.atan2(cos_theta);

    if theta < 1e-4 {
        // θ / sin θ ≈ 1 + θ²/6
        return Ok(vee * (1.0 + theta * theta / 6.0));
    }
    if cos_theta > -0.5 {
        return Ok(vee * (theta / sin_theta));
    }

    // Near π the antisymmetric part vanishes; read the axis from the
    // symmetric part instead: (R + Rᵀ)/2 - cos θ I = (1 - cos θ) a aᵀ.
    let s = (m + m.transpose()) * 0.5 - Mat3::identity() * cos_theta;
    let i = (0..3)
        .max_by(|&a, &b| s[(a, a)].total_cmp(&s[(b, b)]))
        .unwrap_or(0);
    let mut axis: Vec3 = s.column(i).into_owned();
    axis /= axis.norm();
    let d = axis.dot(&vee);
    if d < 0.0 {
        axis = -axis;
    } else if d.abs() < 1e-14 {
        // half turn: both signs are the same rotation
        let lead = axis.iter().copied().find(|c| c.abs() > 1e-12).unwrap_or(1.0);
        if lead < 0.0 {
            axis = -axis;
        }
    }
    Ok(axis * theta)
}

/// Rotation matrix from roll-pitch-yaw in the intrinsic x-y'-z'' convention,
/// `R = Rx(roll) * Ry(pitch) * Rz(yaw)`. Angles in radians.
pub fn rotation_from_rpy(roll: f64, pitch: f64, yaw: f64) -> Mat3 {
    let rx = rotation_from_angle_axis(&Vec3::new(roll, 0.0, 0.0));
    let ry = rotation_from_angle_axis(&Vec3::new(0.0, pitch, 0.0));
    let rz = rotation_from_angle_axis(&Vec3::new(0.0, 0.0, yaw));
    rx * ry * rz
}

/// Inverse of [`rotation_from_rpy`]; returns `(roll, pitch, yaw)` in radians.
pub fn rpy_from_rotation(m: &Mat3) -> (f64, f64, f64) {
    let pitch = m[(0, 2)].clamp(-1.0, 1.0).asin();
    let roll = (-m[(1, 2)]).atan2(m[(2, 2)]);
    let yaw = (-m[(0, 1)]).atan2(m[(0, 0)]);
    (roll, pitch, yaw)
}

/// Rigid transform stored as angle-axis rotation plus translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Vec3,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self { rotation: Vec3::zeros(), translation: Vec3::zeros() }
    }

    pub fn new(rotation: Vec3, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn from_matrix(rotation: &Mat3, translation: Vec3) -> Result<Self, GeometryError> {
        Ok(Self { rotation: angle_axis_from_rotation(rotation)?, translation })
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        rotation_from_angle_axis(&self.rotation)
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation_matrix() * p + self.translation
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let ra = self.rotation_matrix();
        let rb = other.rotation_matrix();
        let rotation = angle_axis_from_rotation(&(ra * rb))
            .expect("product of rotations is a rotation");
        Pose { rotation, translation: ra * other.translation + self.translation }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation_matrix().transpose();
        Pose { rotation: canonical(-self.rotation), translation: -(rt * self.translation) }
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.iter().chain(self.translation.iter()).all(|v| v.is_finite())
    }
}

/// Maps an angle-axis vector to the canonical range `|r| <= π`.
pub fn canonical(r: Vec3) -> Vec3 {
    let theta = r.norm();
    if theta <= PI {
        return r;
    }
    angle_axis_from_rotation(&rotation_from_angle_axis(&r)).unwrap_or(r)
}

/// Pinhole intrinsics with `[k1, k2, p1, p2]` Brown–Conrady distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default)]
    pub skew: f64,
    #[serde(default)]
    pub dist: [f64; 4],
}

impl CameraModel {
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self { fx, fy, cx, cy, skew: 0.0, dist: [0.0; 4] }
    }

    pub fn with_distortion(mut self, dist: [f64; 4]) -> Self {
        self.dist = dist;
        self
    }

    /// Checks the type invariants against an image of `width × height` pixels.
    pub fn validate(&self, width: u32, height: u32) -> Result<(), String> {
        let all = [self.fx, self.fy, self.cx, self.cy, self.skew];
        if all.iter().chain(self.dist.iter()).any(|v| !v.is_finite()) {
            return Err("camera parameters must be finite".into());
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(format!("focal lengths must be positive (fx={}, fy={})", self.fx, self.fy));
        }
        if self.cx < 0.0 || self.cx > width as f64 || self.cy < 0.0 || self.cy > height as f64 {
            return Err(format!(
                "principal point ({}, {}) outside the {width}x{height} image",
                self.cx, self.cy
            ));
        }
        Ok(())
    }

    pub fn k_matrix(&self) -> Mat3 {
        Mat3::new(self.fx, self.skew, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn distort(&self, n: &Vec2) -> Result<Vec2, GeometryError> {
        self.distort_within(n, DEFAULT_VALIDITY_RADIUS)
    }

    pub fn distort_within(&self, n: &Vec2, validity_radius: f64) -> Result<Vec2, GeometryError> {
        if !(n.x.is_finite() && n.y.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let radius = n.norm();
        if radius > validity_radius {
            return Err(GeometryError::OutsideValidityRadius { radius, limit: validity_radius });
        }
        Ok(self.distort_unchecked(n))
    }

    fn distort_unchecked(&self, n: &Vec2) -> Vec2 {
        let [k1, k2, p1, p2] = self.dist;
        let (x, y) = (n.x, n.y);
        let r2 = x * x + y * y;
        let radial = 1.0 + k1 * r2 + k2 * r2 * r2;
        Vec2::new(
            x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x),
            y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y,
        )
    }

    fn distort_jacobian(&self, n: &Vec2) -> Matrix2<f64> {
        let [k1, k2, p1, p2] = self.dist;
        let (x, y) = (n.x, n.y);
        let r2 = x * x + y * y;
        let radial = 1.0 + k1 * r2 + k2 * r2 * r2;
        let dradial = 2.0 * k1 + 4.0 * k2 * r2; // d(radial)/d(r2) * 2
        Matrix2::new(
            radial + x * x * dradial + 2.0 * p1 * y + 6.0 * p2 * x,
            x * y * dradial + 2.0 * p1 * x + 2.0 * p2 * y,
            x * y * dradial + 2.0 * p1 * x + 2.0 * p2 * y,
            radial + y * y * dradial + 6.0 * p1 * y + 2.0 * p2 * x,
        )
    }

    /// Newton iteration for the normalized point whose distortion is `d`.
    pub fn undistort(&self, d: &Vec2) -> Result<Vec2, GeometryError> {
        if !(d.x.is_finite() && d.y.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let radius = d.norm();
        if radius > DEFAULT_VALIDITY_RADIUS {
            return Err(GeometryError::OutsideValidityRadius {
                radius,
                limit: DEFAULT_VALIDITY_RADIUS,
            });
        }
        let mut n = *d;
        let mut residual = f64::INFINITY;
        for _ in 0..UNDISTORT_MAX_ITERS {
            let err = self.distort_unchecked(&n) - d;
            residual = err.norm();
            if residual < UNDISTORT_TOL {
                return Ok(n);
            }
            let step = self
                .distort_jacobian(&n)
                .lu()
                .solve(&err)
                .ok_or(GeometryError::NoConvergence { residual })?;
            n -= step;
            if !(n.x.is_finite() && n.y.is_finite()) {
                break;
            }
        }
        Err(GeometryError::NoConvergence { residual })
    }

    /// Pixel coordinates of a camera-frame normalized point after distortion.
    pub fn normalized_to_pixel(&self, n: &Vec2) -> Result<Vec2, GeometryError> {
        let d = self.distort(n)?;
        Ok(Vec2::new(self.fx * d.x + self.skew * d.y + self.cx, self.fy * d.y + self.cy))
    }

    /// Full chain: rigid transform, perspective divide, distortion, pixel mapping.
    pub fn project(&self, pose: &Pose, p: &Vec3) -> Result<Vec2, GeometryError> {
        self.project_camera_point(&pose.apply(p))
    }

    pub fn project_camera_point(&self, pc: &Vec3) -> Result<Vec2, GeometryError> {
        if !pc.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if pc.z <= DEFAULT_Z_MIN {
            return Err(GeometryError::BehindCamera { z: pc.z });
        }
        self.normalized_to_pixel(&Vec2::new(pc.x / pc.z, pc.y / pc.z))
    }
}

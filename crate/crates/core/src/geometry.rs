//! Calibrated pinhole camera model.
//!
//! A camera pose holds the camera center in world coordinates and an
//! axis-angle rotation taking world directions into the camera frame:
//!
//! ```text
//! p_cam = R(rotation) * (X - position)
//! u     = f * p_cam.x / p_cam.z + cx
//! v     = f * p_cam.y / p_cam.z + cy
//! ```
//!
//! The camera looks along its own +z axis. Intrinsics are fixed constants and
//! never part of the estimated state, so a pose is exactly six parameters,
//! packed as `[rotation, position]`.

use nalgebra::{Matrix2x3, Matrix2x6, Matrix3, Rotation3, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Number of parameters in a camera pose.
pub const POSE_DIM: usize = 6;
/// Number of parameters in a world point.
pub const POINT_DIM: usize = 3;
/// Number of components in a pixel measurement.
pub const PIXEL_DIM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GeometryError {
    #[error("point is behind the camera (depth {depth})")]
    BehindCamera { depth: f64 },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
}

/// Fixed pinhole intrinsics, all in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub focal_length: f64,
    pub principal_point: [f64; 2],
    pub image_size: [f64; 2],
}

impl Intrinsics {
    pub fn new(
        focal_length: f64,
        principal_point: [f64; 2],
        image_size: [f64; 2],
    ) -> Result<Self, GeometryError> {
        let intrinsics = Self {
            focal_length,
            principal_point,
            image_size,
        };
        intrinsics.validate()?;
        Ok(intrinsics)
    }

    /// Square-pixel camera whose horizontal field of view spans `fov_deg`
    /// across `width`, with the principal point at the image center.
    pub fn from_fov(fov_deg: f64, width: f64, height: f64) -> Result<Self, GeometryError> {
        if !(fov_deg > 0.0 && fov_deg < 180.0) {
            return Err(GeometryError::InvalidIntrinsics("field of view must be in (0, 180)"));
        }
        let focal_length = 0.5 * width / (0.5 * fov_deg.to_radians()).tan();
        Self::new(focal_length, [0.5 * width, 0.5 * height], [width, height])
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.focal_length.is_finite() && self.focal_length > 0.0) {
            return Err(GeometryError::InvalidIntrinsics("focal length must be positive"));
        }
        if !self.image_size.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(GeometryError::InvalidIntrinsics("image size must be positive"));
        }
        if !self.principal_point.iter().all(|p| p.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics("principal point must be finite"));
        }
        Ok(())
    }

    pub fn principal_point(&self) -> Vector2<f64> {
        Vector2::new(self.principal_point[0], self.principal_point[1])
    }

    /// Whether a pixel lies inside the image rectangle (edges included).
    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        (0.0..=self.image_size[0]).contains(&pixel.x) && (0.0..=self.image_size[1]).contains(&pixel.y)
    }

    /// Half-angle tangents of the field of view along image x and y.
    pub fn half_fov_tangents(&self) -> (f64, f64) {
        (
            0.5 * self.image_size[0] / self.focal_length,
            0.5 * self.image_size[1] / self.focal_length,
        )
    }
}

/// Camera extrinsics: center in world coordinates and world-to-camera
/// axis-angle rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub position: Vector3<f64>,
    pub rotation: Vector3<f64>,
}

impl CameraPose {
    pub fn new(position: Vector3<f64>, rotation: Vector3<f64>) -> Self {
        Self { position, rotation }
    }

    /// Parameter vector in packed order `[rotation, position]`.
    pub fn to_vector(&self) -> Vector6<f64> {
        let mut v = Vector6::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.rotation);
        v.fixed_rows_mut::<3>(3).copy_from(&self.position);
        v
    }

    pub fn from_slice(params: &[f64]) -> Self {
        debug_assert_eq!(params.len(), POSE_DIM);
        Self {
            rotation: Vector3::new(params[0], params[1], params[2]),
            position: Vector3::new(params[3], params[4], params[5]),
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        Rotation3::new(self.rotation).into_inner()
    }

    /// Equivalent pose with rotation angle in `[0, π]`.
    pub fn canonicalized(&self) -> Self {
        let theta = self.rotation.norm();
        if theta <= PI {
            return *self;
        }
        let wrapped = theta.rem_euclid(2.0 * PI);
        let axis = self.rotation / theta;
        let rotation = if wrapped <= PI {
            axis * wrapped
        } else {
            -axis * (2.0 * PI - wrapped)
        };
        Self { rotation, ..*self }
    }

    pub fn to_camera_frame(&self, point: &WorldPoint) -> Vector3<f64> {
        self.rotation_matrix() * (point.0 - self.position)
    }
}

/// Feature position in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldPoint(pub Vector3<f64>);

impl WorldPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self(Vector3::new(x, y, z))
    }

    pub fn coords(&self) -> &Vector3<f64> {
        &self.0
    }
}

fn perspective_divide(
    intrinsics: &Intrinsics,
    p_cam: &Vector3<f64>,
) -> Result<Vector2<f64>, GeometryError> {
    if !(p_cam.z > 0.0) {
        return Err(GeometryError::BehindCamera { depth: p_cam.z });
    }
    let f = intrinsics.focal_length;
    Ok(Vector2::new(
        f * p_cam.x / p_cam.z + intrinsics.principal_point[0],
        f * p_cam.y / p_cam.z + intrinsics.principal_point[1],
    ))
}

/// Pixel coordinates of `point` seen from `pose`.
pub fn project(
    pose: &CameraPose,
    intrinsics: &Intrinsics,
    point: &WorldPoint,
) -> Result<Vector2<f64>, GeometryError> {
    perspective_divide(intrinsics, &pose.to_camera_frame(point))
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Right Jacobian of the SO(3) exponential map:
/// `Exp(r + δ) ≈ Exp(r) Exp(J_r(r) δ)`.
pub fn so3_right_jacobian(r: &Vector3<f64>) -> Matrix3<f64> {
    let theta_sq = r.norm_squared();
    let k = skew(r);
    let (a, b) = if theta_sq < 1e-8 {
        (0.5 - theta_sq / 24.0, 1.0 / 6.0 - theta_sq / 120.0)
    } else {
        let theta = theta_sq.sqrt();
        (
            (1.0 - theta.cos()) / theta_sq,
            (theta - theta.sin()) / (theta_sq * theta),
        )
    };
    Matrix3::identity() - k * a + k * k * b
}

/// Analytic Jacobians of [`project`]: `A = ∂h/∂pose` (columns ordered
/// `[rotation, position]`) and `B = ∂h/∂point`.
pub fn jacobians(
    pose: &CameraPose,
    intrinsics: &Intrinsics,
    point: &WorldPoint,
) -> Result<(Matrix2x6<f64>, Matrix2x3<f64>), GeometryError> {
    let rot = pose.rotation_matrix();
    let offset = point.0 - pose.position;
    let p = rot * offset;
    if !(p.z > 0.0) {
        return Err(GeometryError::BehindCamera { depth: p.z });
    }
    let f = intrinsics.focal_length;
    let inv_z = 1.0 / p.z;
    let d_proj = Matrix2x3::new(
        f * inv_z,
        0.0,
        -f * p.x * inv_z * inv_z,
        0.0,
        f * inv_z,
        -f * p.y * inv_z * inv_z,
    );

    let b = d_proj * rot;
    let d_rot = -(rot * skew(&offset) * so3_right_jacobian(&pose.rotation));
    let mut a = Matrix2x6::zeros();
    a.fixed_columns_mut::<3>(0).copy_from(&(d_proj * d_rot));
    a.fixed_columns_mut::<3>(3).copy_from(&(-b));
    Ok((a, b))
}

/// A back-projected viewing ray with unit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
}

/// World-frame ray through `pixel` from the camera center.
pub fn back_project(pose: &CameraPose, intrinsics: &Intrinsics, pixel: &Vector2<f64>) -> Ray {
    let f = intrinsics.focal_length;
    let d_cam = Vector3::new(
        (pixel.x - intrinsics.principal_point[0]) / f,
        (pixel.y - intrinsics.principal_point[1]) / f,
        1.0,
    );
    let direction = (pose.rotation_matrix().transpose() * d_cam).normalize();
    Ray {
        origin: pose.position,
        direction,
    }
}

/// Least-squares intersection of rays: minimizes the sum of squared
/// perpendicular distances. `None` when the rays are (near) parallel.
pub fn triangulate(rays: &[Ray]) -> Option<Vector3<f64>> {
    if rays.len() < 2 {
        return None;
    }
    let mut lhs = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for ray in rays {
        let proj = Matrix3::identity() - ray.direction * ray.direction.transpose();
        lhs += proj;
        rhs += proj * ray.origin;
    }
    let chol = lhs.cholesky()?;
    // reject numerically rank-deficient systems
    let diag = chol.l_dirty().diagonal();
    if diag.min().powi(2) < 1e-9 * diag.max().powi(2) {
        return None;
    }
    Some(chol.solve(&rhs))
}

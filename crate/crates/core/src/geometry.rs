//! Pinhole projection, backprojection and depth residuals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat3, Vec3};
use crate::raster::DepthMap;
use crate::scalar::Real;

/// Points at or closer than this camera-frame depth are never projected.
pub const MIN_PROJECTION_DEPTH: f64 = 1e-6;

/// Tolerance on `RᵀR = I` and `det R = 1` for accepted poses.
pub const POSE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics<T: Real> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: u32,
    pub height: u32,
}

impl<T: Real> CameraIntrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T, width: u32, height: u32) -> Result<Self> {
        let intr = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > T::zero() && self.fy > T::zero()) {
            return Err(Error::Validation(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        let (w, h) = (T::from_u32(self.width).unwrap(), T::from_u32(self.height).unwrap());
        if !(self.cx >= T::zero() && self.cx < w && self.cy >= T::zero() && self.cy < h) {
            return Err(Error::Validation(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Whether continuous pixel coordinates fall in `[0,width) × [0,height)`.
    pub fn in_bounds(&self, u: T, v: T) -> bool {
        u >= T::zero()
            && v >= T::zero()
            && u < T::from_u32(self.width).unwrap()
            && v < T::from_u32(self.height).unwrap()
    }

    /// Nearest integer pixel for an in-bounds projection.
    ///
    /// Rounding can land one past the last column or row; such pixels are
    /// clamped back onto the image edge.
    pub fn nearest_pixel(&self, u: T, v: T) -> (u32, u32) {
        let x = u.round().to_u32().unwrap_or(0).min(self.width - 1);
        let y = v.round().to_u32().unwrap_or(0).min(self.height - 1);
        (x, y)
    }

    pub fn cast<U: Real>(&self) -> CameraIntrinsics<U> {
        CameraIntrinsics {
            fx: U::lit(self.fx.as_f64()),
            fy: U::lit(self.fy.as_f64()),
            cx: U::lit(self.cx.as_f64()),
            cy: U::lit(self.cy.as_f64()),
            width: self.width,
            height: self.height,
        }
    }
}

/// Rigid camera-to-world transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose<T: Real> {
    pub rotation: Mat3<T>,
    pub translation: Vec3<T>,
}

impl<T: Real> Pose<T> {
    pub fn new(rotation: Mat3<T>, translation: Vec3<T>) -> Result<Self> {
        let pose = Pose {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn identity() -> Self {
        Pose {
            rotation: Mat3::identity(),
            translation: Vec3::zero(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let tol = T::lit(POSE_TOLERANCE);
        let ortho = self.rotation.orthonormality_error();
        if !(ortho <= tol) {
            return Err(Error::Validation(format!(
                "rotation not orthonormal (max |RᵀR − I| = {ortho})"
            )));
        }
        let det = self.rotation.determinant();
        if !((det - T::one()).abs() <= tol) {
            return Err(Error::Validation(format!(
                "rotation determinant {det} is not +1"
            )));
        }
        if !self.translation.is_finite() {
            return Err(Error::Validation("translation is not finite".into()));
        }
        Ok(())
    }

    /// Builds a pose from a row-major homogeneous 4×4 matrix.
    pub fn from_row_major(m: &[T; 16]) -> Result<Self> {
        let (z, o) = (T::zero(), T::one());
        if m[12] != z || m[13] != z || m[14] != z || m[15] != o {
            return Err(Error::Validation(
                "pose bottom row must be [0, 0, 0, 1]".into(),
            ));
        }
        let rotation = Mat3 {
            rows: [[m[0], m[1], m[2]], [m[4], m[5], m[6]], [m[8], m[9], m[10]]],
        };
        Pose::new(rotation, Vec3::new(m[3], m[7], m[11]))
    }

    pub fn to_row_major(&self) -> [T; 16] {
        let r = &self.rotation.rows;
        let t = self.translation;
        let (z, o) = (T::zero(), T::one());
        [
            r[0][0], r[0][1], r[0][2], t.x, r[1][0], r[1][1], r[1][2], t.y, r[2][0], r[2][1],
            r[2][2], t.z, z, z, z, o,
        ]
    }

    /// Camera looking from `eye` at `target`, image x to the right and y down.
    pub fn look_at(eye: Vec3<T>, target: Vec3<T>, up: Vec3<T>) -> Result<Self> {
        let forward = (target - eye).normalized();
        let right = forward.cross(up);
        if !(right.norm() > T::lit(1e-9)) {
            return Err(Error::Contract("look_at direction parallel to up".into()));
        }
        let right = right.normalized();
        let down = forward.cross(right);
        Pose::new(Mat3::from_columns(right, down, forward), eye)
    }

    /// Camera centre in world coordinates.
    pub fn center(&self) -> Vec3<T> {
        self.translation
    }

    pub fn camera_to_world(&self, p: Vec3<T>) -> Vec3<T> {
        self.rotation.mul_vec(p) + self.translation
    }

    pub fn world_to_camera(&self, p: Vec3<T>) -> Vec3<T> {
        self.rotation.transpose().mul_vec(p - self.translation)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -rt.mul_vec(self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    /// Converts to another scalar type without re-validating.
    pub fn cast<U: Real>(&self) -> Pose<U> {
        Pose {
            rotation: self.rotation.cast(),
            translation: self.translation.cast(),
        }
    }

    pub fn compose(&self, other: &Self) -> Self {
        Pose {
            rotation: self.rotation.mul_mat(&other.rotation),
            translation: self.rotation.mul_vec(other.translation) + self.translation,
        }
    }
}

/// A world point that landed inside an image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelProjection<T: Real> {
    pub u: T,
    pub v: T,
    /// Camera-frame depth, always positive.
    pub z_proj: T,
    pub point_index: usize,
}

/// Projects a single world point; `None` when behind the camera or out of bounds.
#[inline]
pub fn project_point<T: Real>(
    p: Vec3<T>,
    pose: &Pose<T>,
    intrinsics: &CameraIntrinsics<T>,
) -> Option<(T, T, T)> {
    let c = pose.world_to_camera(p);
    if !(c.z > T::lit(MIN_PROJECTION_DEPTH)) {
        return None;
    }
    let u = intrinsics.fx * (c.x / c.z) + intrinsics.cx;
    let v = intrinsics.fy * (c.y / c.z) + intrinsics.cy;
    intrinsics.in_bounds(u, v).then_some((u, v, c.z))
}

/// Projects every point; retained projections keep input order and carry their
/// position in `points` as `point_index`.
pub fn project_points<T: Real>(
    points: &[Vec3<T>],
    pose: &Pose<T>,
    intrinsics: &CameraIntrinsics<T>,
) -> Vec<PixelProjection<T>> {
    points
        .iter()
        .enumerate()
        .filter_map(|(i, &p)| {
            project_point(p, pose, intrinsics).map(|(u, v, z_proj)| PixelProjection {
                u,
                v,
                z_proj,
                point_index: i,
            })
        })
        .collect()
}

/// Projects the subset `indices` of `points`; `point_index` is the cloud index.
pub fn project_subset<T: Real>(
    points: &[Vec3<T>],
    indices: impl IntoIterator<Item = usize>,
    pose: &Pose<T>,
    intrinsics: &CameraIntrinsics<T>,
) -> Vec<PixelProjection<T>> {
    indices
        .into_iter()
        .filter_map(|i| {
            project_point(points[i], pose, intrinsics).map(|(u, v, z_proj)| PixelProjection {
                u,
                v,
                z_proj,
                point_index: i,
            })
        })
        .collect()
}

/// Lifts a pixel at metric depth into world coordinates.
pub fn backproject_pixel<T: Real>(
    u: T,
    v: T,
    depth: T,
    pose: &Pose<T>,
    intrinsics: &CameraIntrinsics<T>,
) -> Result<Vec3<T>> {
    if !(depth > T::zero()) || !depth.is_finite() {
        return Err(Error::Contract(format!(
            "backprojection depth must be positive, got {depth}"
        )));
    }
    let c = Vec3::new(
        (u - intrinsics.cx) / intrinsics.fx * depth,
        (v - intrinsics.cy) / intrinsics.fy * depth,
        depth,
    );
    Ok(pose.camera_to_world(c))
}

/// Signed residual `z_proj − sensor depth` at the nearest pixel.
///
/// Projections whose pixel has no valid depth reading are omitted.
pub fn depth_residuals<T: Real>(
    projections: &[PixelProjection<T>],
    depth_map: &DepthMap<T>,
) -> Vec<(usize, T)> {
    projections
        .iter()
        .filter_map(|p| {
            let (x, y) = nearest(depth_map, p.u, p.v);
            let sensor = depth_map.get(x, y);
            DepthMap::is_valid(sensor).then(|| (p.point_index, p.z_proj - sensor))
        })
        .collect()
}

fn nearest<T: Real>(depth_map: &DepthMap<T>, u: T, v: T) -> (u32, u32) {
    let x = u.round().to_u32().unwrap_or(0).min(depth_map.width() - 1);
    let y = v.round().to_u32().unwrap_or(0).min(depth_map.height() - 1);
    (x, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn camera() -> CameraIntrinsics<f64> {
        CameraIntrinsics::new(100.0, 100.0, 64.0, 48.0, 128, 96).unwrap()
    }

    #[test]
    fn principal_ray_hits_principal_point() {
        let p = project_points(&[Vec3::lit(0.0, 0.0, 2.0)], &Pose::identity(), &camera());
        assert_eq!(p.len(), 1);
        assert_eq!((p[0].u, p[0].v, p[0].z_proj), (64.0, 48.0, 2.0));
    }

    #[test]
    fn lateral_offset_follows_focal_length() {
        let p = project_points(&[Vec3::lit(0.5, 0.0, 2.0)], &Pose::identity(), &camera());
        assert_eq!((p[0].u, p[0].v), (89.0, 48.0));
    }

    #[test]
    fn points_behind_or_outside_are_dropped() {
        let pts = [
            Vec3::lit(0.0, 0.0, -1.0),
            Vec3::lit(0.0, 0.0, 0.0),
            Vec3::lit(10.0, 0.0, 1.0),
            Vec3::lit(0.1, 0.1, 1.0),
        ];
        let p = project_points(&pts, &Pose::identity(), &camera());
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].point_index, 3);
    }

    #[test]
    fn backprojection_inverts_principal_case() {
        let w = backproject_pixel(64.0, 48.0, 2.0, &Pose::identity(), &camera()).unwrap();
        assert_eq!(w, Vec3::lit(0.0, 0.0, 2.0));
    }

    #[test]
    fn backprojection_rejects_non_positive_depth() {
        assert!(matches!(
            backproject_pixel(1.0, 1.0, 0.0, &Pose::identity(), &camera()),
            Err(Error::Contract(_))
        ));
        assert!(backproject_pixel(1.0, 1.0, -2.0, &Pose::identity(), &camera()).is_err());
    }

    #[test]
    fn residuals_follow_sensor_depth() {
        let mut depth = DepthMap::filled(128, 96, 2.0);
        depth.set(10, 10, 0.0);
        let projections = [
            PixelProjection { u: 64.0, v: 48.0, z_proj: 2.0, point_index: 0 },
            PixelProjection { u: 64.2, v: 47.8, z_proj: 2.5, point_index: 1 },
            PixelProjection { u: 10.4, v: 9.6, z_proj: 2.5, point_index: 2 },
        ];
        let r = depth_residuals(&projections, &depth);
        assert_eq!(r, vec![(0, 0.0), (1, 0.5)]);
    }

    #[test]
    fn invalid_poses_are_rejected() {
        let mut m = Pose::<f64>::identity().to_row_major();
        m[0] = 1.1;
        assert!(matches!(Pose::from_row_major(&m), Err(Error::Validation(_))));
        let mut flip = Pose::<f64>::identity().to_row_major();
        flip[10] = -1.0;
        assert!(Pose::from_row_major(&flip).is_err());
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::<f64>::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::<f64>::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::<f32>::new(1.0, 1.0, 3.9, 0.0, 4, 4).is_ok());
    }

    #[test]
    fn look_at_points_the_optical_axis_at_the_target() {
        let pose = Pose::<f64>::look_at(
            Vec3::lit(0.0, -2.0, 1.0),
            Vec3::lit(0.0, 0.0, 1.0),
            Vec3::lit(0.0, 0.0, 1.0),
        )
        .unwrap();
        let c = pose.world_to_camera(Vec3::lit(0.0, 0.0, 1.0));
        assert!((c.x).abs() < 1e-12 && (c.y).abs() < 1e-12 && (c.z - 2.0).abs() < 1e-12);
        // +x world is image-right, +z world is image-up.
        assert!(pose.world_to_camera(Vec3::lit(1.0, 0.0, 1.0)).x > 0.0);
        assert!(pose.world_to_camera(Vec3::lit(0.0, 0.0, 2.0)).y < 0.0);
    }
}

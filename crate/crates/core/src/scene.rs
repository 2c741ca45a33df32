//! In-memory scene representation: posed RGB-D frames plus a dense cloud.

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose};
use crate::linalg::Vec3;
use crate::pointset::PointSet;
use crate::raster::DepthMap;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud<T: Real> {
    pub points: Vec<Vec3<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub colors: Option<Vec<[u8; 3]>>,
}

impl<T: Real> PointCloud<T> {
    pub fn new(points: Vec<Vec3<T>>, colors: Option<Vec<[u8; 3]>>) -> Result<Self> {
        let cloud = PointCloud { points, colors };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::Validation("point cloud is empty".into()));
        }
        if let Some(i) = self.points.iter().position(|p| !p.is_finite()) {
            return Err(Error::Validation(format!("point {i} is not finite")));
        }
        if let Some(c) = &self.colors {
            if c.len() != self.points.len() {
                return Err(Error::Validation(format!(
                    "{} colors for {} points",
                    c.len(),
                    self.points.len()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid_of(&self, indices: &PointSet) -> Option<Vec3<T>> {
        if indices.is_empty() {
            return None;
        }
        let sum = indices
            .iter()
            .fold(Vec3::zero(), |acc, i| acc + self.points[i]);
        Some(sum * (T::one() / T::from_count(indices.len())))
    }
}

#[derive(Debug, Clone)]
pub struct Frame<T: Real> {
    pub index: u32,
    pub rgb: RgbImage,
    pub depth: DepthMap<T>,
    pub intrinsics: CameraIntrinsics<T>,
    pub pose: Pose<T>,
}

impl<T: Real> Frame<T> {
    pub fn new(
        index: u32,
        rgb: RgbImage,
        depth: DepthMap<T>,
        intrinsics: CameraIntrinsics<T>,
        pose: Pose<T>,
    ) -> Result<Self> {
        let frame = Frame {
            index,
            rgb,
            depth,
            intrinsics,
            pose,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.intrinsics.width, self.intrinsics.height);
        if self.rgb.dimensions() != (w, h) || (self.depth.width(), self.depth.height()) != (w, h) {
            return Err(Error::Validation(format!(
                "frame {}: rgb {:?}, depth {}x{} and intrinsics {}x{} disagree",
                self.index,
                self.rgb.dimensions(),
                self.depth.width(),
                self.depth.height(),
                w,
                h
            )));
        }
        if self.depth.data().iter().any(|d| d.is_nan() || d.is_infinite()) {
            return Err(Error::Validation(format!(
                "frame {}: depth contains non-finite values",
                self.index
            )));
        }
        self.intrinsics
            .validate()
            .map_err(|e| Error::Validation(format!("frame {}: {e}", self.index)))?;
        self.pose
            .validate()
            .map_err(|e| Error::Validation(format!("frame {}: {e}", self.index)))
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.intrinsics.width, self.intrinsics.height)
    }
}

#[derive(Debug, Clone)]
pub struct SceneSequence<T: Real> {
    pub scene_id: String,
    pub frames: Vec<Frame<T>>,
    pub cloud: PointCloud<T>,
    /// Gravity-opposed unit vector of the scene frame.
    pub up_axis: Vec3<T>,
}

impl<T: Real> SceneSequence<T> {
    pub fn new(
        scene_id: impl Into<String>,
        frames: Vec<Frame<T>>,
        cloud: PointCloud<T>,
        up_axis: Vec3<T>,
    ) -> Result<Self> {
        let scene = SceneSequence {
            scene_id: scene_id.into(),
            frames,
            cloud,
            up_axis,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        self.cloud.validate()?;
        for pair in self.frames.windows(2) {
            if pair[1].index <= pair[0].index {
                return Err(Error::Validation(format!(
                    "frame indices not strictly increasing ({} then {})",
                    pair[0].index, pair[1].index
                )));
            }
        }
        if !((self.up_axis.norm() - T::one()).abs() < T::lit(1e-6)) {
            return Err(Error::Validation("up axis must be a unit vector".into()));
        }
        Ok(())
    }

    pub fn frame(&self, index: u32) -> Option<&Frame<T>> {
        self.frames
            .binary_search_by_key(&index, |f| f.index)
            .ok()
            .map(|i| &self.frames[i])
    }
}

/// Ground-truth point set annotated with an affordance category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffordanceAnnotation {
    pub category: String,
    pub point_indices: PointSet,
    pub scene_id: String,
}

/// Canonical category form: trimmed, lowercase.
pub fn normalize_label(label: &str) -> String {
    label.trim().to_lowercase()
}

//! Training-free 3D functional affordance grounding.
//!
//! The core is generic over the scalar type (`f32` or `f64`); the aliases at
//! the crate root fix it to `f64`, which the pipeline uses throughout.

pub mod backends;
pub mod dbscan;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod graph;
pub mod linalg;
pub mod memory;
pub mod persist;
pub mod pointset;
pub mod query;
pub mod raster;
pub mod scalar;
pub mod scene;
pub mod scene_io;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
pub use pointset::PointSet;
pub use raster::{DepthMap as GenericDepthMap, Mask};
pub use scalar::Real;

pub type Vec3 = linalg::Vec3<f64>;
pub type Aabb = linalg::Aabb<f64>;
pub type Mat3 = linalg::Mat3<f64>;
pub type CameraIntrinsics = geometry::CameraIntrinsics<f64>;
pub type Pose = geometry::Pose<f64>;
pub type PixelProjection = geometry::PixelProjection<f64>;
pub type DepthMap = raster::DepthMap<f64>;
pub type PointCloud = scene::PointCloud<f64>;
pub type Frame = scene::Frame<f64>;
pub type SceneSequence = scene::SceneSequence<f64>;
pub type DepthFilterParams = stats::DepthFilterParams<f64>;
pub type MemoryBank = memory::MemoryBank<f64>;
pub type MemoryExemplar = memory::MemoryExemplar<f64>;
pub type MemoryParams = memory::MemoryParams<f64>;
pub type FrameScore = memory::FrameScore<f64>;
pub type VotingParams = fusion::VotingParams<f64>;
pub type FusionParams = fusion::FusionParams<f64>;
pub type Candidate3D = fusion::Candidate3D<f64>;
pub type CandidatePool = fusion::CandidatePool<f64>;
pub type GraphNode = graph::GraphNode<f64>;
pub type SceneGraph = graph::SceneGraph<f64>;

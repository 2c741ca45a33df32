//! In-scene spatial memory: candidate instances organised as context (CTX)
//! and interactive (INT) nodes with parent links.

pub mod crops;
pub mod render;
pub mod resolve;
pub mod serialize;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::Candidate3D;
use crate::linalg::{Aabb, Vec3};
use crate::pointset::PointSet;
use crate::scalar::Real;
use crate::scene::normalize_label;

pub use crops::{extract_crops, CropSet};
pub use render::{render_topdown, render_topdown_raster};
pub use resolve::{resolve_spatial, Resolution};
pub use serialize::{parse_graph, serialize_graph};

/// Slack around a CTX box when testing whether it holds an INT centroid.
pub const CONTAINMENT_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    #[serde(rename = "CTX")]
    Ctx,
    #[serde(rename = "INT")]
    Int,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Ctx => "CTX",
            NodeKind::Int => "INT",
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode<T: Real> {
    pub node_id: usize,
    pub kind: NodeKind,
    pub label: String,
    pub centroid: Vec3<T>,
    pub aabb: Aabb<T>,
    pub parent_id: Option<usize>,
    pub point_indices: PointSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph<T: Real> {
    pub scene_id: String,
    pub up_axis: Vec3<T>,
    pub nodes: Vec<GraphNode<T>>,
}

impl<T: Real> SceneGraph<T> {
    pub fn node(&self, id: usize) -> Option<&GraphNode<T>> {
        id.checked_sub(1).and_then(|i| self.nodes.get(i))
    }

    pub fn validate(&self) -> Result<()> {
        if !((self.up_axis.norm() - T::one()).abs() < T::lit(1e-6)) {
            return Err(Error::Validation("graph up axis must be a unit vector".into()));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if n.node_id != i + 1 {
                return Err(Error::Validation(format!(
                    "node at position {} has id {}",
                    i + 1,
                    n.node_id
                )));
            }
            match (n.kind, n.parent_id) {
                (NodeKind::Ctx, Some(_)) => {
                    return Err(Error::Validation(format!("CTX node {} has a parent", n.node_id)))
                }
                (NodeKind::Int, Some(p)) if self.node(p).map(|q| q.kind) != Some(NodeKind::Ctx) => {
                    return Err(Error::Validation(format!(
                        "node {} references missing CTX parent {p}",
                        n.node_id
                    )))
                }
                _ => {}
            }
            if !n.centroid.is_finite() || !n.aabb.min.is_finite() || !n.aabb.max.is_finite() {
                return Err(Error::Validation(format!("node {} is not finite", n.node_id)));
            }
        }
        Ok(())
    }

    /// INT nodes carrying `label`, in id order.
    pub fn interactive(&self, label: &str) -> Vec<&GraphNode<T>> {
        let label = normalize_label(label);
        self.nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Int && n.label == label)
            .collect()
    }

    pub fn context(&self, label: &str) -> Vec<&GraphNode<T>> {
        let label = normalize_label(label);
        self.nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Ctx && n.label == label)
            .collect()
    }
}

/// One node per candidate. CTX nodes come first, then INT nodes, each block
/// ordered by centroid. Every INT node's parent is the smallest CTX box
/// (dilated by [`CONTAINMENT_MARGIN`]) containing its centroid.
pub fn build_graph<T: Real>(
    scene_id: &str,
    int_candidates: &[Candidate3D<T>],
    int_label: &str,
    ctx_pools: &[(String, Vec<Candidate3D<T>>)],
    up_axis: Vec3<T>,
) -> SceneGraph<T> {
    let mut ctx: Vec<(String, &Candidate3D<T>)> = ctx_pools
        .iter()
        .flat_map(|(label, pool)| pool.iter().map(move |c| (normalize_label(label), c)))
        .collect();
    ctx.sort_by(|a, b| a.1.centroid.lex_cmp(&b.1.centroid).then_with(|| a.0.cmp(&b.0)));
    let mut ints: Vec<&Candidate3D<T>> = int_candidates.iter().collect();
    ints.sort_by(|a, b| a.centroid.lex_cmp(&b.centroid));

    let mut nodes: Vec<GraphNode<T>> = ctx
        .into_iter()
        .enumerate()
        .map(|(i, (label, c))| GraphNode {
            node_id: i + 1,
            kind: NodeKind::Ctx,
            label,
            centroid: c.centroid,
            aabb: c.aabb,
            parent_id: None,
            point_indices: c.point_indices.clone(),
        })
        .collect();
    let n_ctx = nodes.len();
    let int_label = normalize_label(int_label);
    for (k, c) in ints.into_iter().enumerate() {
        let parent = nodes[..n_ctx]
            .iter()
            .filter(|p| p.aabb.dilated(T::lit(CONTAINMENT_MARGIN)).contains(c.centroid))
            .min_by(|a, b| {
                a.aabb
                    .volume()
                    .total_order(b.aabb.volume())
                    .then(a.node_id.cmp(&b.node_id))
            })
            .map(|p| p.node_id);
        nodes.push(GraphNode {
            node_id: n_ctx + k + 1,
            kind: NodeKind::Int,
            label: int_label.clone(),
            centroid: c.centroid,
            aabb: c.aabb,
            parent_id: parent,
            point_indices: c.point_indices.clone(),
        });
    }
    SceneGraph {
        scene_id: scene_id.to_string(),
        up_axis,
        nodes,
    }
}

/// Orthonormal map frame `(right, back, up)` for an up axis: right is world x
/// with its up component removed (world y if x is parallel to up).
pub fn map_axes<T: Real>(up: Vec3<T>) -> (Vec3<T>, Vec3<T>, Vec3<T>) {
    let up = up.normalized();
    let mut right = Vec3::lit(1.0, 0.0, 0.0);
    right = right - up * right.dot(up);
    if !(right.norm() > T::lit(1e-6)) {
        right = Vec3::lit(0.0, 1.0, 0.0);
        right = right - up * right.dot(up);
    }
    let right = right.normalized();
    (right, up.cross(right), up)
}

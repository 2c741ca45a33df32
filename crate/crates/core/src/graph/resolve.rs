//! Deterministic resolution of spatial descriptors against a scene graph.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{map_axes, GraphNode, SceneGraph};
use crate::error::{Error, Result};
use crate::query::{Direction, Relation, SpatialDescriptor};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub node_id: usize,
    /// Set when the descriptor left several equally valid answers.
    pub warning: Option<String>,
}

impl Resolution {
    fn exact(node_id: usize) -> Self {
        Resolution {
            node_id,
            warning: None,
        }
    }
}

fn nearest_to<'a, T: Real>(
    candidates: impl Iterator<Item = &'a GraphNode<T>>,
    refs: &[&GraphNode<T>],
) -> Option<&'a GraphNode<T>> {
    let dist = |n: &GraphNode<T>| {
        refs.iter()
            .map(|r| n.centroid.distance(r.centroid))
            .fold(T::infinity(), T::min)
    };
    candidates.min_by(|a, b| dist(a).total_order(dist(b)).then(a.node_id.cmp(&b.node_id)))
}

/// Picks the INT node labelled `int_label` that the descriptor designates.
///
/// Ordinals rank along the map frame (up axis, world-x-derived right axis,
/// back = up × right), ties by node id. Relations and `nearest` measure
/// against the CTX nodes carrying the reference label.
pub fn resolve_spatial<T: Real>(
    graph: &SceneGraph<T>,
    descriptor: &SpatialDescriptor,
    int_label: &str,
) -> Result<Resolution> {
    let candidates = graph.interactive(int_label);
    if candidates.is_empty() {
        return Err(Error::Resolution(format!("no INT node labelled '{int_label}'")));
    }
    let (right, back, up) = map_axes(graph.up_axis);
    let references = |label: &str| {
        let refs = graph.context(label);
        if refs.is_empty() {
            Err(Error::Resolution(format!("no CTX node labelled '{label}'")))
        } else {
            Ok(refs)
        }
    };
    match descriptor {
        SpatialDescriptor::None => {
            let first = candidates[0].node_id;
            Ok(if candidates.len() == 1 {
                Resolution::exact(first)
            } else {
                Resolution {
                    node_id: first,
                    warning: Some(format!(
                        "{} '{}' nodes and no spatial qualifier; chose node {first}",
                        candidates.len(),
                        int_label
                    )),
                }
            })
        }
        SpatialDescriptor::Ordinal { rank, direction } => {
            let (axis, descending) = match direction {
                Direction::Top => (up, true),
                Direction::Bottom => (up, false),
                Direction::Right => (right, true),
                Direction::Left => (right, false),
                Direction::Back => (back, true),
                Direction::Front => (back, false),
            };
            let mut ranked = candidates;
            ranked.sort_by(|a, b| {
                let (ka, kb) = (a.centroid.dot(axis), b.centroid.dot(axis));
                let o = if descending { kb.total_order(ka) } else { ka.total_order(kb) };
                if o == Ordering::Equal {
                    a.node_id.cmp(&b.node_id)
                } else {
                    o
                }
            });
            let k = *rank as usize;
            if k == 0 || k > ranked.len() {
                return Err(Error::Resolution(format!(
                    "rank {k} requested among {} candidates",
                    ranked.len()
                )));
            }
            Ok(Resolution::exact(ranked[k - 1].node_id))
        }
        SpatialDescriptor::Relation {
            relation,
            reference_label,
        } => {
            let refs = references(reference_label)?;
            let coord = |n: &GraphNode<T>, axis| n.centroid.dot(axis);
            let lo = |axis| refs.iter().map(|r| coord(r, axis)).fold(T::infinity(), T::min);
            let hi = |axis| refs.iter().map(|r| coord(r, axis)).fold(T::neg_infinity(), T::max);
            let qualifies = |n: &GraphNode<T>| match relation {
                Relation::LeftOf => coord(n, right) < lo(right),
                Relation::RightOf => coord(n, right) > hi(right),
                Relation::Above => coord(n, up) > hi(up),
                Relation::Below => coord(n, up) < lo(up),
                Relation::NextTo => true,
            };
            nearest_to(candidates.into_iter().filter(|n| qualifies(n)), &refs)
                .map(|n| Resolution::exact(n.node_id))
                .ok_or_else(|| {
                    Error::Resolution(format!(
                        "no '{int_label}' node is {relation:?} '{reference_label}'"
                    ))
                })
        }
        SpatialDescriptor::Nearest { reference_label } => {
            let refs = references(reference_label)?;
            Ok(Resolution::exact(
                nearest_to(candidates.into_iter(), &refs)
                    .expect("candidates non-empty")
                    .node_id,
            ))
        }
    }
}

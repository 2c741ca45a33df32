//! Byte-stable JSON form of a scene graph.
//!
//! Coordinates are written with four decimals; point indices are not part of
//! this form (the full graph is persisted separately).

use std::fmt::Write;

use serde_json::Value;

use super::{GraphNode, NodeKind, SceneGraph};
use crate::error::{Error, Result};
use crate::linalg::{Aabb, Vec3};
use crate::pointset::PointSet;
use crate::scalar::Real;

fn num<T: Real>(v: T) -> String {
    let s = format!("{:.4}", v.as_f64());
    if s == "-0.0000" {
        "0.0000".into()
    } else {
        s
    }
}

fn vec3<T: Real>(v: Vec3<T>) -> String {
    format!("[{}, {}, {}]", num(v.x), num(v.y), num(v.z))
}

fn string(s: &str) -> String {
    serde_json::to_string(s).expect("strings serialize")
}

pub fn serialize_graph<T: Real>(graph: &SceneGraph<T>) -> String {
    let mut out = String::new();
    out.push_str("{\n");
    let _ = writeln!(out, "  \"scene_id\": {},", string(&graph.scene_id));
    let _ = writeln!(out, "  \"up_axis\": {},", vec3(graph.up_axis));
    out.push_str("  \"nodes\": [");
    for (i, n) in graph.nodes.iter().enumerate() {
        out.push_str(if i == 0 { "\n" } else { ",\n" });
        let parent = n.parent_id.map_or("null".to_string(), |p| p.to_string());
        let _ = write!(
            out,
            "    {{\"id\": {}, \"kind\": \"{}\", \"label\": {}, \"centroid\": {}, \"aabb\": {{\"min\": {}, \"max\": {}}}, \"parent\": {}}}",
            n.node_id,
            n.kind,
            string(&n.label),
            vec3(n.centroid),
            vec3(n.aabb.min),
            vec3(n.aabb.max),
            parent
        );
    }
    out.push_str(if graph.nodes.is_empty() { "]\n" } else { "\n  ]\n" });
    out.push_str("}\n");
    out
}

fn bad(message: impl Into<String>, raw: &str) -> Error {
    Error::parse(message, raw)
}

fn read_vec3<T: Real>(v: &Value, what: &str, raw: &str) -> Result<Vec3<T>> {
    let a = v
        .as_array()
        .filter(|a| a.len() == 3)
        .ok_or_else(|| bad(format!("{what} is not a 3-vector"), raw))?;
    let c = |i: usize| {
        a[i].as_f64()
            .map(T::lit)
            .ok_or_else(|| bad(format!("{what}[{i}] is not a number"), raw))
    };
    Ok(Vec3::new(c(0)?, c(1)?, c(2)?))
}

/// Inverse of [`serialize_graph`]; nodes come back without point indices.
pub fn parse_graph<T: Real>(json: &str) -> Result<SceneGraph<T>> {
    let v: Value = serde_json::from_str(json).map_err(|e| Error::Parse {
        message: format!("graph JSON: {e}"),
        raw: json.to_string(),
        offset: None,
    })?;
    let scene_id = v["scene_id"]
        .as_str()
        .ok_or_else(|| bad("missing scene_id", json))?
        .to_string();
    let up_axis = read_vec3(&v["up_axis"], "up_axis", json)?;
    let mut nodes = Vec::new();
    for n in v["nodes"].as_array().ok_or_else(|| bad("missing nodes", json))? {
        let kind = match n["kind"].as_str() {
            Some("CTX") => NodeKind::Ctx,
            Some("INT") => NodeKind::Int,
            _ => return Err(bad("node kind must be CTX or INT", json)),
        };
        let parent_id = match &n["parent"] {
            Value::Null => None,
            p => Some(p.as_u64().ok_or_else(|| bad("parent is not an id", json))? as usize),
        };
        nodes.push(GraphNode {
            node_id: n["id"].as_u64().ok_or_else(|| bad("node id missing", json))? as usize,
            kind,
            label: n["label"]
                .as_str()
                .ok_or_else(|| bad("node label missing", json))?
                .to_string(),
            centroid: read_vec3(&n["centroid"], "centroid", json)?,
            aabb: Aabb::new(
                read_vec3(&n["aabb"]["min"], "aabb.min", json)?,
                read_vec3(&n["aabb"]["max"], "aabb.max", json)?,
            ),
            parent_id,
            point_indices: PointSet::new(),
        });
    }
    let graph = SceneGraph {
        scene_id,
        up_axis: up_axis.normalized(),
        nodes,
    };
    graph.validate()?;
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn negative_zero_is_normalised() {
        assert_eq!(num(-0.00001f64), "0.0000");
        assert_eq!(num(-0.5f64), "-0.5000");
        assert_eq!(num(1.23456f32), "1.2346");
    }

    #[test]
    fn empty_graph_serializes() {
        let g = SceneGraph::<f64> {
            scene_id: "e".into(),
            up_axis: Vec3::lit(0.0, 0.0, 1.0),
            nodes: vec![],
        };
        let s = serialize_graph(&g);
        assert_eq!(
            s,
            "{\n  \"scene_id\": \"e\",\n  \"up_axis\": [0.0000, 0.0000, 1.0000],\n  \"nodes\": []\n}\n"
        );
        assert_eq!(parse_graph::<f64>(&s).unwrap(), g);
    }
}

//! Per-node appearance crops from the best-scoring view of each node.

use std::collections::{BTreeMap, BTreeSet};

use image::{imageops, RgbImage};
use log::warn;
use rayon::prelude::*;

use super::{GraphNode, SceneGraph};
use crate::geometry::{depth_residuals, project_subset};
use crate::memory::{frame_quality_score, rank_order, FrameScore, ScoreWeights, SequenceStats};
use crate::raster::convex_hull_fill;
use crate::scalar::Real;
use crate::scene::{Frame, SceneSequence};
use crate::stats::{depth_consistency_filter, DepthFilterParams};

/// Fraction of the projected extent added on every side of a crop.
pub const CROP_DILATION: f64 = 0.10;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CropSet {
    pub crops: BTreeMap<usize, RgbImage>,
    /// Frame each crop was cut from.
    pub source_frames: BTreeMap<usize, u32>,
    /// One message per node that no frame shows.
    pub warnings: Vec<String>,
}

struct View<T: Real> {
    frame_index: u32,
    pixels: Vec<(T, T)>,
}

fn node_view<T: Real>(
    node: &GraphNode<T>,
    scene: &SceneSequence<T>,
    frame: &Frame<T>,
    filter: &DepthFilterParams<T>,
) -> Option<View<T>> {
    let proj = project_subset(&scene.cloud.points, node.point_indices.iter(), &frame.pose, &frame.intrinsics);
    let kept: BTreeSet<usize> = depth_consistency_filter(&depth_residuals(&proj, &frame.depth), filter)
        .into_iter()
        .collect();
    let pixels: Vec<(T, T)> = proj
        .iter()
        .filter(|p| kept.contains(&p.point_index))
        .map(|p| (p.u, p.v))
        .collect();
    (!pixels.is_empty()).then_some(View {
        frame_index: frame.index,
        pixels,
    })
}

fn crop_box<T: Real>(pixels: &[(T, T)], width: u32, height: u32) -> (u32, u32, u32, u32) {
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &(u, v) in pixels {
        let (u, v) = (u.as_f64(), v.as_f64());
        x0 = x0.min(u);
        y0 = y0.min(v);
        x1 = x1.max(u);
        y1 = y1.max(v);
    }
    let (dx, dy) = ((x1 - x0) * CROP_DILATION, (y1 - y0) * CROP_DILATION);
    let clamp = |v: f64, hi: u32| v.round().clamp(0.0, (hi - 1) as f64) as u32;
    (
        clamp(x0 - dx, width),
        clamp(y0 - dy, height),
        clamp(x1 + dx, width),
        clamp(y1 + dy, height),
    )
}

fn best_crop<T: Real>(
    node: &GraphNode<T>,
    scene: &SceneSequence<T>,
    filter: &DepthFilterParams<T>,
    weights: &ScoreWeights<T>,
) -> Option<(u32, RgbImage)> {
    let views: Vec<View<T>> = scene
        .frames
        .iter()
        .filter_map(|f| node_view(node, scene, f, filter))
        .collect();
    let frame_of = |i: u32| scene.frame(i).expect("view frame exists");
    let stats = SequenceStats::from_distances(
        views
            .iter()
            .map(|v| frame_of(v.frame_index).pose.center().distance(node.centroid)),
    )?;
    let mut scored: Vec<(FrameScore<T>, &View<T>)> = views
        .iter()
        .filter_map(|v| {
            let frame = frame_of(v.frame_index);
            let (w, h) = frame.dimensions();
            let mask = convex_hull_fill(&v.pixels, w, h).ok()?;
            frame_quality_score(&scene.scene_id, &mask, frame, node.centroid, &stats, weights)
                .ok()
                .map(|s| (s, v))
        })
        .collect();
    scored.sort_by(|a, b| rank_order(&a.0, &b.0));
    let (_, view) = scored.into_iter().next()?;
    let frame = frame_of(view.frame_index);
    let (w, h) = frame.dimensions();
    let (x0, y0, x1, y1) = crop_box(&view.pixels, w, h);
    let crop = imageops::crop_imm(&frame.rgb, x0, y0, x1 - x0 + 1, y1 - y0 + 1).to_image();
    Some((view.frame_index, crop))
}

/// Crops every node from its highest-scoring view; nodes seen nowhere are
/// reported in `warnings` instead.
pub fn extract_crops<T: Real>(
    graph: &SceneGraph<T>,
    scene: &SceneSequence<T>,
    filter: &DepthFilterParams<T>,
    weights: &ScoreWeights<T>,
) -> CropSet {
    let results: Vec<(usize, Option<(u32, RgbImage)>)> = graph
        .nodes
        .par_iter()
        .map(|n| (n.node_id, best_crop(n, scene, filter, weights)))
        .collect();
    let mut out = CropSet::default();
    for (id, r) in results {
        match r {
            Some((frame, img)) => {
                out.crops.insert(id, img);
                out.source_frames.insert(id, frame);
            }
            None => {
                let msg = format!("node {id} is not visible in any frame; no crop");
                warn!("{msg}");
                out.warnings.push(msg);
            }
        }
    }
    out
}

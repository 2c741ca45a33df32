//! Cross-scene affordance memory: category-indexed overlay exemplars built from
//! annotated source scenes and recalled by exact label match.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{depth_residuals, project_subset};
use crate::linalg::Vec3;
use crate::persist::{load_artifact, persist_artifact};
use crate::raster::Mask;
use crate::scalar::Real;
use crate::scene::{normalize_label, AffordanceAnnotation, Frame, SceneSequence};
use crate::stats::{depth_consistency_filter, DepthFilterParams};

pub use crate::raster::convex_hull_fill;

pub const BANK_MANIFEST: &str = "bank.json";
pub const DEFAULT_K_RECALL: usize = 20;
/// Fill colour of memory overlays.
pub const OVERLAY_COLOR: [u8; 3] = [0, 255, 0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights<T: Real> {
    pub centrality: T,
    pub proximity: T,
}

impl<T: Real> Default for ScoreWeights<T> {
    fn default() -> Self {
        ScoreWeights {
            centrality: T::half(),
            proximity: T::half(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameScore<T: Real> {
    pub scene_id: String,
    pub frame_index: u32,
    pub centrality: T,
    pub proximity: T,
    pub score: T,
}

/// Ranking order: score descending, then scene id, then frame index ascending.
pub fn rank_order<T: Real>(a: &FrameScore<T>, b: &FrameScore<T>) -> Ordering {
    b.score
        .total_order(a.score)
        .then_with(|| a.scene_id.cmp(&b.scene_id))
        .then_with(|| a.frame_index.cmp(&b.frame_index))
}

/// Range of inverse camera-to-object distance over a sequence's usable frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceStats<T: Real> {
    pub min_inverse_distance: T,
    pub max_inverse_distance: T,
}

impl<T: Real> SequenceStats<T> {
    pub fn from_distances(distances: impl IntoIterator<Item = T>) -> Option<Self> {
        let mut it = distances.into_iter().map(|d| T::one() / d);
        let first = it.next()?;
        let (lo, hi) = it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v)));
        Some(SequenceStats {
            min_inverse_distance: lo,
            max_inverse_distance: hi,
        })
    }

    /// Min-max normalised inverse distance; a degenerate range maps to 1.
    pub fn proximity(&self, distance: T) -> T {
        let range = self.max_inverse_distance - self.min_inverse_distance;
        if !(range > T::lit(1e-12)) {
            return T::one();
        }
        ((T::one() / distance - self.min_inverse_distance) / range)
            .max(T::zero())
            .min(T::one())
    }
}

/// Scores a frame by mask centrality and camera proximity to the object.
pub fn frame_quality_score<T: Real>(
    scene_id: &str,
    mask: &Mask,
    frame: &Frame<T>,
    object_centroid: Vec3<T>,
    stats: &SequenceStats<T>,
    weights: &ScoreWeights<T>,
) -> Result<FrameScore<T>> {
    let (mx, my) = mask
        .centroid()
        .ok_or_else(|| Error::Contract("frame score needs a non-empty mask".into()))?;
    let (w, h) = (mask.width() as f64 - 1.0, mask.height() as f64 - 1.0);
    let half_diag = (w * w + h * h).sqrt() / 2.0;
    let offset = ((mx - w / 2.0).powi(2) + (my - h / 2.0).powi(2)).sqrt();
    let centrality = if half_diag > 0.0 {
        T::lit((1.0 - offset / half_diag).clamp(0.0, 1.0))
    } else {
        T::one()
    };
    let distance = frame.pose.center().distance(object_centroid);
    let proximity = stats.proximity(distance);
    let score = (weights.centrality * centrality + weights.proximity * proximity)
        .max(T::zero())
        .min(T::one());
    Ok(FrameScore {
        scene_id: scene_id.to_string(),
        frame_index: frame.index,
        centrality,
        proximity,
        score,
    })
}

/// The `k` best entries under [`rank_order`], best first.
pub fn select_top_k<T: Real>(mut scored: Vec<FrameScore<T>>, k: usize) -> Result<Vec<FrameScore<T>>> {
    if k < 1 {
        return Err(Error::Contract("top-k selection needs k >= 1".into()));
    }
    scored.sort_by(rank_order);
    scored.truncate(k);
    Ok(scored)
}

/// Frames in which at least one annotated point projects in bounds onto a valid depth pixel.
pub fn find_visible_frames<T: Real>(
    annotation: &AffordanceAnnotation,
    scene: &SceneSequence<T>,
) -> Vec<u32> {
    scene
        .frames
        .iter()
        .filter(|frame| {
            let proj = project_subset(
                &scene.cloud.points,
                annotation.point_indices.iter(),
                &frame.pose,
                &frame.intrinsics,
            );
            !depth_residuals(&proj, &frame.depth).is_empty()
        })
        .map(|f| f.index)
        .collect()
}

/// Blends a fixed colour at 50% opacity over the masked pixels.
pub fn render_overlay(rgb: &RgbImage, mask: &Mask) -> RgbImage {
    let mut out = rgb.clone();
    for (x, y) in mask.pixels() {
        let p = rgb.get_pixel(x, y).0;
        let blend = |a: u8, b: u8| ((a as u16 + b as u16 + 1) / 2) as u8;
        out.put_pixel(
            x,
            y,
            Rgb([
                blend(p[0], OVERLAY_COLOR[0]),
                blend(p[1], OVERLAY_COLOR[1]),
                blend(p[2], OVERLAY_COLOR[2]),
            ]),
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryExemplar<T: Real> {
    pub category: String,
    pub scene_id: String,
    pub frame_index: u32,
    pub overlay: RgbImage,
    pub mask: Mask,
    pub score: FrameScore<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryParams<T: Real> {
    pub filter: DepthFilterParams<T>,
    pub weights: ScoreWeights<T>,
    pub k_recall: usize,
}

impl<T: Real> Default for MemoryParams<T> {
    fn default() -> Self {
        MemoryParams {
            filter: DepthFilterParams::default(),
            weights: ScoreWeights::default(),
            k_recall: DEFAULT_K_RECALL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank<T: Real> {
    pub entries: BTreeMap<String, Vec<MemoryExemplar<T>>>,
    pub params: MemoryParams<T>,
    pub source_scene_ids: BTreeSet<String>,
}

impl<T: Real> MemoryBank<T> {
    pub fn k_recall(&self) -> usize {
        self.params.k_recall
    }

    /// Exemplars for an interaction label; empty for unseen categories.
    pub fn recall(&self, interaction_label: &str) -> &[MemoryExemplar<T>] {
        self.entries
            .get(&normalize_label(interaction_label))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// Per-frame result of projecting and filtering one annotation.
struct FilteredView<T: Real> {
    frame_index: u32,
    mask: Mask,
    centroid: Vec3<T>,
}

fn filtered_view<T: Real>(
    annotation: &AffordanceAnnotation,
    scene: &SceneSequence<T>,
    frame: &Frame<T>,
    params: &DepthFilterParams<T>,
) -> Option<FilteredView<T>> {
    let proj = project_subset(
        &scene.cloud.points,
        annotation.point_indices.iter(),
        &frame.pose,
        &frame.intrinsics,
    );
    let residuals = depth_residuals(&proj, &frame.depth);
    if residuals.is_empty() {
        return None;
    }
    let retained: BTreeSet<usize> = depth_consistency_filter(&residuals, params)
        .into_iter()
        .collect();
    if retained.is_empty() {
        return None;
    }
    let pixels: Vec<(T, T)> = proj
        .iter()
        .filter(|p| retained.contains(&p.point_index))
        .map(|p| (p.u, p.v))
        .collect();
    let (w, h) = frame.dimensions();
    let mask = convex_hull_fill(&pixels, w, h).ok()?;
    let centroid = retained
        .iter()
        .fold(Vec3::zero(), |acc, &i| acc + scene.cloud.points[i])
        * (T::one() / T::from_count(retained.len()));
    Some(FilteredView {
        frame_index: frame.index,
        mask,
        centroid,
    })
}

/// Builds the memory bank from source-scene annotations.
///
/// Categories whose annotations never survive the depth filter are left out.
pub fn build_memory_bank<T: Real>(
    annotations: &[AffordanceAnnotation],
    scenes: &BTreeMap<String, SceneSequence<T>>,
    params: &MemoryParams<T>,
) -> Result<MemoryBank<T>> {
    params.filter.validate()?;
    if params.k_recall < 1 {
        return Err(Error::Contract("k_recall must be at least 1".into()));
    }
    let mut by_category: BTreeMap<String, Vec<&AffordanceAnnotation>> = BTreeMap::new();
    for ann in annotations {
        if !scenes.contains_key(&ann.scene_id) {
            return Err(Error::Contract(format!(
                "annotation '{}' references unknown scene '{}'",
                ann.category, ann.scene_id
            )));
        }
        by_category
            .entry(normalize_label(&ann.category))
            .or_default()
            .push(ann);
    }

    let mut entries = BTreeMap::new();
    for (category, anns) in by_category {
        let mut scored: Vec<FrameScore<T>> = Vec::new();
        let mut masks: BTreeMap<(String, u32), Mask> = BTreeMap::new();
        for ann in anns {
            let scene = &scenes[&ann.scene_id];
            let views: Vec<FilteredView<T>> = scene
                .frames
                .par_iter()
                .filter_map(|f| filtered_view(ann, scene, f, &params.filter))
                .collect();
            let distances = views.iter().map(|v| {
                let frame = scene.frame(v.frame_index).expect("frame exists");
                frame.pose.center().distance(v.centroid)
            });
            let Some(stats) = SequenceStats::from_distances(distances) else {
                continue;
            };
            for view in views {
                let frame = scene.frame(view.frame_index).expect("frame exists");
                let score = frame_quality_score(
                    &scene.scene_id,
                    &view.mask,
                    frame,
                    view.centroid,
                    &stats,
                    &params.weights,
                )?;
                scored.push(score);
                masks.insert((scene.scene_id.clone(), view.frame_index), view.mask);
            }
        }
        if scored.is_empty() {
            info!("category '{category}' has no surviving frames; left out of the bank");
            continue;
        }
        let top = select_top_k(scored, params.k_recall)?;
        let exemplars = top
            .into_iter()
            .map(|score| {
                let mask = masks
                    .remove(&(score.scene_id.clone(), score.frame_index))
                    .expect("mask recorded for every scored frame");
                let frame = scenes[&score.scene_id]
                    .frame(score.frame_index)
                    .expect("frame exists");
                MemoryExemplar {
                    category: category.clone(),
                    scene_id: score.scene_id.clone(),
                    frame_index: score.frame_index,
                    overlay: render_overlay(&frame.rgb, &mask),
                    mask,
                    score,
                }
            })
            .collect();
        entries.insert(category, exemplars);
    }
    Ok(MemoryBank {
        entries,
        params: params.clone(),
        source_scene_ids: annotations.iter().map(|a| a.scene_id.clone()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarRecord<T: Real> {
    pub scene_id: String,
    pub frame_index: u32,
    pub score: FrameScore<T>,
    pub overlay: String,
    pub mask: String,
}

/// JSON manifest of a persisted memory bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankManifest<T: Real> {
    pub params: MemoryParams<T>,
    pub source_scene_ids: BTreeSet<String>,
    pub categories: BTreeMap<String, Vec<ExemplarRecord<T>>>,
}

fn file_stem(category: &str, scene_id: &str, frame_index: u32) -> String {
    let clean = |s: &str| s.replace(['/', '\\'], "_");
    format!("{}/{}_{}", clean(category), clean(scene_id), frame_index)
}

pub fn save_bank<T: Real + Serialize>(bank: &MemoryBank<T>, dir: &Path) -> Result<()> {
    let mut categories = BTreeMap::new();
    for (category, exemplars) in &bank.entries {
        let mut records = Vec::with_capacity(exemplars.len());
        for ex in exemplars {
            let stem = file_stem(category, &ex.scene_id, ex.frame_index);
            let overlay = format!("{stem}.png");
            let mask = format!("{stem}_mask.png");
            let overlay_path = dir.join(&overlay);
            if let Some(parent) = overlay_path.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            ex.overlay
                .save(&overlay_path)
                .map_err(|e| Error::ingestion(&overlay_path, e.to_string()))?;
            ex.mask
                .to_gray_image()
                .save(dir.join(&mask))
                .map_err(|e| Error::ingestion(dir.join(&mask), e.to_string()))?;
            records.push(ExemplarRecord {
                scene_id: ex.scene_id.clone(),
                frame_index: ex.frame_index,
                score: ex.score.clone(),
                overlay,
                mask,
            });
        }
        categories.insert(category.clone(), records);
    }
    let manifest = BankManifest {
        params: bank.params.clone(),
        source_scene_ids: bank.source_scene_ids.clone(),
        categories,
    };
    persist_artifact(&manifest, &dir.join(BANK_MANIFEST))
}

pub fn load_bank<T: Real + serde::de::DeserializeOwned>(dir: &Path) -> Result<MemoryBank<T>> {
    let manifest: BankManifest<T> = load_artifact(&dir.join(BANK_MANIFEST))?;
    let mut entries = BTreeMap::new();
    for (category, records) in manifest.categories {
        let mut exemplars = Vec::with_capacity(records.len());
        for rec in records {
            let overlay_path = dir.join(&rec.overlay);
            let overlay = image::open(&overlay_path)
                .map_err(|e| Error::ingestion(&overlay_path, e.to_string()))?
                .into_rgb8();
            let mask_path = dir.join(&rec.mask);
            let mask = Mask::from_gray_image(
                &image::open(&mask_path)
                    .map_err(|e| Error::ingestion(&mask_path, e.to_string()))?
                    .into_luma8(),
            );
            exemplars.push(MemoryExemplar {
                category: category.clone(),
                scene_id: rec.scene_id,
                frame_index: rec.frame_index,
                overlay,
                mask,
                score: rec.score,
            });
        }
        entries.insert(category, exemplars);
    }
    Ok(MemoryBank {
        entries,
        params: manifest.params,
        source_scene_ids: manifest.source_scene_ids,
    })
}

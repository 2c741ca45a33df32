//! Replays recorded backend responses keyed by request.

use std::collections::BTreeMap;
use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{BoundingBox2D, Grounder, GroundingRequest, LanguageModel, Segmenter, SelectionRequest, Selector};
use crate::error::{Error, Result};
use crate::persist::load_artifact;
use crate::raster::Mask;
use crate::scalar::Real;
use crate::scene::{normalize_label, Frame};

/// Recorded responses. Grounding and text segmentation are keyed by
/// `scene/frame/label`, box segmentation by `scene/frame/x0,y0,x1,y1`,
/// selection by instruction and completion by user message.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReplayScript {
    pub ground: BTreeMap<String, String>,
    pub select: BTreeMap<String, String>,
    pub complete: BTreeMap<String, String>,
    pub segment_text: BTreeMap<String, Vec<Mask>>,
    pub segment_box: BTreeMap<String, Mask>,
}

pub fn frame_key(scene_id: &str, frame_index: u32, label: &str) -> String {
    format!("{scene_id}/{frame_index}/{}", normalize_label(label))
}

pub fn box_key(scene_id: &str, frame_index: u32, b: &BoundingBox2D) -> String {
    format!("{scene_id}/{frame_index}/{},{},{},{}", b.x_min, b.y_min, b.x_max, b.y_max)
}

pub struct ReplayBackend {
    script: ReplayScript,
}

fn missing(kind: &str, key: &str) -> Error {
    Error::Backend {
        attempts: 1,
        message: format!("no recorded {kind} response for '{key}'"),
    }
}

impl ReplayBackend {
    pub fn new(script: ReplayScript) -> Self {
        ReplayBackend { script }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(ReplayBackend::new(load_artifact(path)?))
    }
}

impl<T: Real> Grounder<T> for ReplayBackend {
    fn respond(&self, request: &GroundingRequest<'_, T>) -> Result<String> {
        let key = frame_key(request.scene_id, request.query_frame.index, request.interaction_label);
        self.script.ground.get(&key).cloned().ok_or_else(|| missing("grounding", &key))
    }
}

impl Selector for ReplayBackend {
    fn respond(&self, request: &SelectionRequest) -> Result<String> {
        self.script
            .select
            .get(&request.instruction)
            .cloned()
            .ok_or_else(|| missing("selection", &request.instruction))
    }
}

impl LanguageModel for ReplayBackend {
    fn complete(&self, _system: &str, user: &str, _images: &[RgbImage]) -> Result<String> {
        self.script.complete.get(user).cloned().ok_or_else(|| missing("completion", user))
    }
}

impl<T: Real> Segmenter<T> for ReplayBackend {
    fn segment_by_text(&self, scene_id: &str, frame: &Frame<T>, label: &str) -> Result<Vec<Mask>> {
        let key = frame_key(scene_id, frame.index, label);
        self.script
            .segment_text
            .get(&key)
            .cloned()
            .ok_or_else(|| missing("segmentation", &key))
    }

    fn segment_box(&self, scene_id: &str, frame: &Frame<T>, bbox: &BoundingBox2D) -> Result<Mask> {
        let key = box_key(scene_id, frame.index, bbox);
        self.script
            .segment_box
            .get(&key)
            .cloned()
            .ok_or_else(|| missing("segmentation", &key))
    }
}

//! Geometric oracle backends answering from synthetic scenario ground truth.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::{BoundingBox2D, Grounder, GroundingRequest, LanguageModel, Segmenter, SelectionRequest, Selector};
use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::query::{format_response, parse_query_heuristic};
use crate::raster::Mask;
use crate::scalar::Real;
use crate::scene::{normalize_label, Frame};
use crate::synth::{render_ids, Scenario};

/// Instances covering fewer pixels than this are not reported by the grounder.
pub const MIN_GROUNDED_PIXELS: usize = 6;
/// Margin around a positive box used as its companion when the parent is unseen.
const COMPANION_MARGIN: f64 = 8.0;

/// Per-pixel instance ids of one rendered frame.
struct IdMap {
    width: u32,
    height: u32,
    ids: Vec<Option<usize>>,
}

impl IdMap {
    fn mask_of(&self, keep: impl Fn(usize) -> bool) -> Mask {
        Mask::from_fn(self.width, self.height, |x, y| {
            self.ids[(y * self.width + x) as usize].is_some_and(&keep)
        })
    }

    /// Inclusive pixel bounds of an instance.
    fn bounds(&self, id: usize) -> Option<(u32, u32, u32, u32)> {
        self.mask_of(|i| i == id).bounding_box()
    }

    fn counts(&self) -> BTreeMap<usize, usize> {
        let mut out = BTreeMap::new();
        for id in self.ids.iter().flatten() {
            *out.entry(*id).or_insert(0) += 1;
        }
        out
    }
}

fn stable_seed(parts: &[&[u8]]) -> u64 {
    // FNV-1a, stable across platforms and toolchains.
    let mut h: u64 = 0xcbf29ce484222325;
    for part in parts {
        for &b in part.iter().chain(std::iter::once(&0xff)) {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

/// Oracle grounder, selector, segmenter and language model in one.
///
/// In noise mode text segmentation adds one spurious mask per frame covering
/// the queried instances together with everything they are mounted on.
pub struct OracleBackend {
    scenarios: BTreeMap<String, Scenario>,
    noise: bool,
    cache: Mutex<HashMap<(String, u32), Arc<IdMap>>>,
}

impl OracleBackend {
    pub fn new(scenarios: impl IntoIterator<Item = Scenario>, noise: bool) -> Self {
        OracleBackend {
            scenarios: scenarios.into_iter().map(|s| (s.scene_id.clone(), s)).collect(),
            noise,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn noisy(&self) -> bool {
        self.noise
    }

    fn scenario(&self, scene_id: &str) -> Result<&Scenario> {
        self.scenarios.get(scene_id).ok_or_else(|| Error::Backend {
            attempts: 1,
            message: format!("oracle has no scenario for scene '{scene_id}'"),
        })
    }

    fn id_map<T: Real>(&self, scene_id: &str, frame: &Frame<T>) -> Result<Arc<IdMap>> {
        let key = (scene_id.to_string(), frame.index);
        if let Some(m) = self.cache.lock().expect("oracle cache poisoned").get(&key) {
            return Ok(m.clone());
        }
        let scenario = self.scenario(scene_id)?;
        let intrinsics = frame.intrinsics.cast::<f64>();
        let ids = render_ids(&scenario.boxes(), &frame.pose.cast(), &intrinsics)
            .into_iter()
            .map(|hit| hit.map(|(id, _)| id))
            .collect();
        let map = Arc::new(IdMap {
            width: intrinsics.width,
            height: intrinsics.height,
            ids,
        });
        self.cache
            .lock()
            .expect("oracle cache poisoned")
            .insert(key, map.clone());
        Ok(map)
    }

    fn instances_labeled<'a>(&self, scenario: &'a Scenario, label: &str) -> Vec<usize> {
        let label = normalize_label(label);
        scenario
            .instances
            .iter()
            .filter(|i| i.label == label)
            .map(|i| i.id)
            .collect()
    }
}

fn to_box(b: (u32, u32, u32, u32), part_index: u8) -> BoundingBox2D {
    BoundingBox2D {
        x_min: b.0 as f64,
        y_min: b.1 as f64,
        x_max: b.2 as f64,
        y_max: b.3 as f64,
        part_index,
    }
}

fn box_json(b: &BoundingBox2D) -> Value {
    json!({"bbox_2d": [b.x_min, b.y_min, b.x_max, b.y_max], "part_index": b.part_index})
}

impl<T: Real> Grounder<T> for OracleBackend {
    fn respond(&self, request: &GroundingRequest<'_, T>) -> Result<String> {
        let scenario = self.scenario(request.scene_id)?;
        let map = self.id_map(request.scene_id, request.query_frame)?;
        let counts = map.counts();
        let (xm, ym) = ((map.width - 1) as f64, (map.height - 1) as f64);
        let mut out = Vec::new();
        for id in self.instances_labeled(scenario, request.interaction_label) {
            if counts.get(&id).copied().unwrap_or(0) < MIN_GROUNDED_PIXELS {
                continue;
            }
            let frame_bytes = request.query_frame.index.to_le_bytes();
            let id_bytes = (id as u64).to_le_bytes();
            let mut rng = ChaCha8Rng::seed_from_u64(stable_seed(&[
                request.scene_id.as_bytes(),
                &frame_bytes,
                &id_bytes,
            ]));
            let mut pos = to_box(map.bounds(id).expect("visible instance"), 1);
            pos.x_min = (pos.x_min - rng.gen_range(1..=2) as f64).max(0.0);
            pos.y_min = (pos.y_min - rng.gen_range(1..=2) as f64).max(0.0);
            pos.x_max = (pos.x_max + rng.gen_range(1..=2) as f64).min(xm);
            pos.y_max = (pos.y_max + rng.gen_range(1..=2) as f64).min(ym);
            out.push(box_json(&pos));
            if request.adversarial {
                let parent = scenario.instances[id]
                    .parent
                    .and_then(|p| map.bounds(p))
                    .map(|b| to_box(b, 0));
                let neg = parent.unwrap_or(BoundingBox2D {
                    x_min: (pos.x_min - COMPANION_MARGIN).max(0.0),
                    y_min: (pos.y_min - COMPANION_MARGIN).max(0.0),
                    x_max: (pos.x_max + COMPANION_MARGIN).min(xm),
                    y_max: (pos.y_max + COMPANION_MARGIN).min(ym),
                    part_index: 0,
                });
                out.push(box_json(&neg));
            }
        }
        Ok(Value::Array(out).to_string())
    }
}

impl<T: Real> Segmenter<T> for OracleBackend {
    fn segment_by_text(&self, scene_id: &str, frame: &Frame<T>, label: &str) -> Result<Vec<Mask>> {
        if label.trim().is_empty() {
            return Err(Error::Contract("segmentation label is empty".into()));
        }
        let scenario = self.scenario(scene_id)?;
        let map = self.id_map(scene_id, frame)?;
        let ids = self.instances_labeled(scenario, label);
        let mut masks: Vec<Mask> = ids
            .iter()
            .map(|&id| map.mask_of(|i| i == id))
            .filter(|m| !m.is_empty())
            .collect();
        if self.noise && !ids.is_empty() {
            let mut family: Vec<usize> = ids.iter().flat_map(|&id| scenario.lineage(id)).collect();
            family.sort_unstable();
            family.dedup();
            let spurious = map.mask_of(|i| family.binary_search(&i).is_ok());
            if !spurious.is_empty() {
                masks.push(spurious);
            }
        }
        Ok(masks)
    }

    fn segment_box(&self, scene_id: &str, frame: &Frame<T>, bbox: &BoundingBox2D) -> Result<Mask> {
        let map = self.id_map(scene_id, frame)?;
        let totals = map.counts();
        let mut inside: BTreeMap<usize, usize> = BTreeMap::new();
        let (x0, y0, x1, y1) = bbox.pixel_range();
        for y in y0..=y1.min(map.height - 1) {
            for x in x0..=x1.min(map.width - 1) {
                if let Some(id) = map.ids[(y * map.width + x) as usize] {
                    *inside.entry(id).or_insert(0) += 1;
                }
            }
        }
        // Most completely enclosed instance; ties favour more pixels, then lower id.
        let best = inside
            .iter()
            .max_by(|a, b| {
                let fa = *a.1 as f64 / totals[a.0] as f64;
                let fb = *b.1 as f64 / totals[b.0] as f64;
                fa.total_cmp(&fb).then(a.1.cmp(b.1)).then(b.0.cmp(a.0))
            })
            .map(|(&id, _)| id);
        Ok(match best {
            Some(id) => {
                let m = map.mask_of(|i| i == id);
                Mask::from_fn(map.width, map.height, |x, y| m.get(x, y) && bbox.contains_pixel(x, y))
            }
            None => Mask::empty(map.width, map.height),
        })
    }
}

impl Selector for OracleBackend {
    fn respond(&self, request: &SelectionRequest) -> Result<String> {
        let graph: Value = serde_json::from_str(&request.graph_json)
            .map_err(|e| Error::parse(format!("oracle cannot read graph: {e}"), &request.graph_json))?;
        let scene_id = graph["scene_id"].as_str().unwrap_or_default();
        let scenario = self.scenario(scene_id)?;
        let query = scenario
            .queries
            .iter()
            .find(|q| q.text == request.instruction)
            .ok_or_else(|| Error::Backend {
                attempts: 1,
                message: format!("oracle has no answer for '{}'", request.instruction),
            })?;
        let centroid_of = |id: usize| -> Option<Vec3<f64>> {
            graph["nodes"].as_array()?.iter().find_map(|n| {
                if n["id"].as_u64()? as usize != id {
                    return None;
                }
                let c = n["centroid"].as_array()?;
                Some(Vec3::new(c[0].as_f64()?, c[1].as_f64()?, c[2].as_f64()?))
            })
        };
        let mut best: Option<(usize, f64)> = None;
        for (k, &id) in request.candidate_ids.iter().enumerate() {
            let c = centroid_of(id).ok_or_else(|| {
                Error::parse(format!("graph has no node {id}"), &request.graph_json)
            })?;
            let d = c.distance(query.target_centroid);
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((k + 1, d));
            }
        }
        best.map(|(k, _)| k.to_string()).ok_or_else(|| Error::Contract("no candidates".into()))
    }
}

impl LanguageModel for OracleBackend {
    fn complete(&self, _system: &str, user: &str, _images: &[RgbImage]) -> Result<String> {
        Ok(format_response(&parse_query_heuristic(user)?))
    }
}

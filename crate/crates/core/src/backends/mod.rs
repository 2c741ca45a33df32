//! Vision-language backend interfaces.
//!
//! Backends return raw text; the free functions here own prompting, parsing,
//! retries and validation so every implementation is held to the same contract.

pub mod oracle;
pub mod prompts;
pub mod replay;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use image::RgbImage;
use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::MemoryExemplar;
use crate::raster::Mask;
use crate::scalar::Real;
use crate::scene::Frame;

/// Default number of concurrent in-flight backend requests.
pub const DEFAULT_CONCURRENCY: usize = 4;
/// Response parse attempts for grounding and selection (1 + 1 retry).
pub const RESPONSE_ATTEMPTS: u32 = 2;
/// Slack around a prompt box that a returned segment may occupy.
pub const BOX_MASK_SLACK: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox2D {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    /// 1 for the operable core, 0 for its non-operable companion.
    pub part_index: u8,
}

impl BoundingBox2D {
    pub fn is_positive(&self) -> bool {
        self.part_index == 1
    }

    pub fn validate(&self, width: u32, height: u32) -> Result<()> {
        let ok = self.x_min < self.x_max
            && self.y_min < self.y_max
            && self.x_min >= 0.0
            && self.y_min >= 0.0
            && self.x_max <= (width - 1) as f64
            && self.y_max <= (height - 1) as f64
            && self.part_index <= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "box {self:?} is not a valid box in a {width}x{height} image"
            )))
        }
    }

    /// Inclusive pixel range covered by the box.
    pub fn pixel_range(&self) -> (u32, u32, u32, u32) {
        (
            self.x_min.ceil() as u32,
            self.y_min.ceil() as u32,
            self.x_max.floor() as u32,
            self.y_max.floor() as u32,
        )
    }

    pub fn contains_pixel(&self, x: u32, y: u32) -> bool {
        let (x0, y0, x1, y1) = self.pixel_range();
        (x0..=x1).contains(&x) && (y0..=y1).contains(&y)
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    pub fn iou(&self, o: &BoundingBox2D) -> f64 {
        let w = (self.x_max.min(o.x_max) - self.x_min.max(o.x_min)).max(0.0);
        let h = (self.y_max.min(o.y_max) - self.y_min.max(o.y_min)).max(0.0);
        let inter = w * h;
        let union = self.area() + o.area() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }
}

pub struct GroundingRequest<'a, T: Real> {
    pub scene_id: &'a str,
    pub query_frame: &'a Frame<T>,
    pub exemplars: &'a [MemoryExemplar<T>],
    pub interaction_label: &'a str,
    pub instruction: &'a str,
    /// Ask for positive/negative pairs; `false` asks for positive boxes only.
    pub adversarial: bool,
}

impl<T: Real> GroundingRequest<'_, T> {
    pub fn validate(&self) -> Result<()> {
        if self.instruction.trim().is_empty() {
            return Err(Error::Contract("grounding instruction is empty".into()));
        }
        if self.interaction_label.trim().is_empty() {
            return Err(Error::Contract("grounding label is empty".into()));
        }
        Ok(())
    }

    pub fn prompt(&self) -> String {
        prompts::grounding_prompt(self.instruction, self.interaction_label, !self.adversarial)
    }
}

pub struct SelectionRequest {
    pub graph_json: String,
    pub topdown_render: RgbImage,
    pub node_crops: BTreeMap<usize, RgbImage>,
    pub instruction: String,
    /// Node ids the answer indexes into, in serialized order.
    pub candidate_ids: Vec<usize>,
}

impl SelectionRequest {
    /// Selection prompt with the numbered candidate list and graph JSON
    /// inserted under the node heading.
    pub fn prompt(&self) -> String {
        let base = prompts::selection_prompt(&self.instruction, self.candidate_ids.len());
        let mut listing: String = self
            .candidate_ids
            .iter()
            .enumerate()
            .map(|(k, id)| format!("{}. node {id}\n", k + 1))
            .collect();
        listing.push_str("Scene graph:\n");
        listing.push_str(&self.graph_json);
        listing.push('\n');
        match base.find("Available affordance nodes\n") {
            Some(at) => {
                let cut = at + "Available affordance nodes\n".len();
                format!("{}{listing}{}", &base[..cut], &base[cut..])
            }
            None => format!("{base}\n{listing}"),
        }
    }
}

pub trait LanguageModel: Send + Sync {
    /// One chat completion with a system prompt, a user message and optional images.
    fn complete(&self, system: &str, user: &str, images: &[RgbImage]) -> Result<String>;
}

pub trait Grounder<T: Real>: Send + Sync {
    /// Raw grounding response for one frame.
    fn respond(&self, request: &GroundingRequest<'_, T>) -> Result<String>;
}

pub trait Selector: Send + Sync {
    /// Raw selection response.
    fn respond(&self, request: &SelectionRequest) -> Result<String>;
}

pub trait Segmenter<T: Real>: Send + Sync {
    fn segment_by_text(&self, scene_id: &str, frame: &Frame<T>, label: &str) -> Result<Vec<Mask>>;

    /// Segments the region prompted by a box; callers go through [`segment_by_box`].
    fn segment_box(&self, scene_id: &str, frame: &Frame<T>, bbox: &BoundingBox2D) -> Result<Mask>;
}

#[derive(Deserialize)]
struct RawBox {
    #[serde(alias = "bbox")]
    bbox_2d: [f64; 4],
    part_index: i64,
}

/// Parses a grounding response into boxes clamped to the image.
///
/// Prose around the JSON array is ignored. Boxes that collapse after clamping
/// are dropped with a warning.
pub fn parse_grounding_response(raw: &str, width: u32, height: u32) -> Result<Vec<BoundingBox2D>> {
    let (start, end) = match (raw.find('['), raw.rfind(']')) {
        (Some(s), Some(e)) if s < e => (s, e),
        _ => return Err(Error::parse("grounding response holds no JSON array", raw)),
    };
    let boxes: Vec<RawBox> = serde_json::from_str(&raw[start..=end]).map_err(|e| Error::Parse {
        message: format!("grounding response is not a box list: {e}"),
        raw: raw.to_string(),
        offset: Some(start),
    })?;
    let (xm, ym) = ((width - 1) as f64, (height - 1) as f64);
    let mut out = Vec::with_capacity(boxes.len());
    for b in boxes {
        if !(0..=1).contains(&b.part_index) {
            return Err(Error::parse(
                format!("part_index {} is neither 0 nor 1", b.part_index),
                raw,
            ));
        }
        if b.bbox_2d.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse("non-finite box coordinate", raw));
        }
        let [x0, y0, x1, y1] = b.bbox_2d;
        let bbox = BoundingBox2D {
            x_min: x0.min(x1).clamp(0.0, xm),
            y_min: y0.min(y1).clamp(0.0, ym),
            x_max: x0.max(x1).clamp(0.0, xm),
            y_max: y0.max(y1).clamp(0.0, ym),
            part_index: b.part_index as u8,
        };
        if bbox.validate(width, height).is_ok() {
            out.push(bbox);
        } else {
            warn!("dropping degenerate box {:?}", b.bbox_2d);
        }
    }
    Ok(out)
}

/// Grounds one frame. Positive-only requests also discard any stray companions.
pub fn ground<T: Real>(
    grounder: &dyn Grounder<T>,
    request: &GroundingRequest<'_, T>,
) -> Result<Vec<BoundingBox2D>> {
    request.validate()?;
    let (w, h) = request.query_frame.dimensions();
    let mut last = None;
    for _ in 0..RESPONSE_ATTEMPTS {
        let raw = grounder.respond(request)?;
        match parse_grounding_response(&raw, w, h) {
            Ok(mut boxes) => {
                if !request.adversarial {
                    boxes.retain(BoundingBox2D::is_positive);
                }
                return Ok(boxes);
            }
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Parses a digits-only selection answer into a 1-based index.
pub fn parse_selection_response(raw: &str) -> Result<usize> {
    let t = raw.trim().trim_end_matches('.');
    if t.is_empty() || !t.bytes().all(|b| b.is_ascii_digit()) {
        return Err(Error::parse("selection response is not a bare number", raw));
    }
    t.parse()
        .map_err(|_| Error::parse("selection number out of range", raw))
}

/// Asks the selector for a node and maps its 1-based answer to a node id.
pub fn select(selector: &dyn Selector, request: &SelectionRequest, n_candidates: usize) -> Result<usize> {
    if n_candidates < 1 {
        return Err(Error::Contract("selection needs at least one candidate".into()));
    }
    if request.candidate_ids.len() != n_candidates {
        return Err(Error::Contract(format!(
            "{} candidate ids for {n_candidates} candidates",
            request.candidate_ids.len()
        )));
    }
    let mut last = None;
    for _ in 0..RESPONSE_ATTEMPTS {
        let raw = selector.respond(request)?;
        match parse_selection_response(&raw) {
            Ok(k) if (1..=n_candidates).contains(&k) => return Ok(request.candidate_ids[k - 1]),
            Ok(k) => {
                return Err(Error::Selection(format!(
                    "answer {k} outside 1..={n_candidates}"
                )))
            }
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Segments a positive box. The returned mask is clipped to the box plus a
/// small slack so no backend can leak far outside its prompt.
pub fn segment_by_box<T: Real>(
    segmenter: &dyn Segmenter<T>,
    scene_id: &str,
    frame: &Frame<T>,
    bbox: &BoundingBox2D,
) -> Result<Mask> {
    if !bbox.is_positive() {
        return Err(Error::Contract(
            "only part_index 1 boxes may be segmented".into(),
        ));
    }
    let (w, h) = frame.dimensions();
    bbox.validate(w, h)?;
    let mask = segmenter.segment_box(scene_id, frame, bbox)?;
    if (mask.width(), mask.height()) != (w, h) {
        return Err(Error::Validation(format!(
            "segment is {}x{}, frame {} is {w}x{h}",
            mask.width(),
            mask.height(),
            frame.index
        )));
    }
    let (x0, y0, x1, y1) = bbox.pixel_range();
    let s = BOX_MASK_SLACK;
    let inside = |x: u32, y: u32| {
        x + s >= x0 && x <= x1 + s && y + s >= y0 && y <= y1 + s
    };
    Ok(Mask::from_fn(w, h, |x, y| mask.get(x, y) && inside(x, y)))
}

/// Runs `f` over `inputs` with at most `limit` calls in flight; output order
/// matches input order regardless of completion order.
pub fn map_bounded<I, O, F>(inputs: &[I], limit: usize, f: F) -> Vec<O>
where
    I: Sync,
    O: Send,
    F: Fn(&I) -> O + Sync,
{
    let limit = limit.max(1).min(inputs.len().max(1));
    if limit == 1 {
        return inputs.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<O>>> = Mutex::new((0..inputs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..limit {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= inputs.len() {
                    break;
                }
                let out = f(&inputs[i]);
                slots.lock().expect("result slots poisoned")[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots poisoned")
        .into_iter()
        .map(|o| o.expect("every input processed"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(&'static str);

    impl Selector for Fixed {
        fn respond(&self, _: &SelectionRequest) -> Result<String> {
            Ok(self.0.to_string())
        }
    }

    fn request(ids: Vec<usize>) -> SelectionRequest {
        SelectionRequest {
            graph_json: "{}".into(),
            topdown_render: RgbImage::new(1, 1),
            node_crops: BTreeMap::new(),
            instruction: "open the drawer".into(),
            candidate_ids: ids,
        }
    }

    #[test]
    fn selection_maps_to_serialized_order() {
        assert_eq!(select(&Fixed("2"), &request(vec![4, 5, 6]), 3).unwrap(), 5);
        assert_eq!(select(&Fixed(" 1\n"), &request(vec![4, 5, 6]), 3).unwrap(), 4);
    }

    #[test]
    fn selection_out_of_range_is_a_selection_error() {
        let err = select(&Fixed("7"), &request(vec![4, 5, 6]), 3).unwrap_err();
        assert!(matches!(err, Error::Selection(_)));
        let err = select(&Fixed("0"), &request(vec![4, 5, 6]), 3).unwrap_err();
        assert!(matches!(err, Error::Selection(_)));
    }

    #[test]
    fn selection_prose_is_a_parse_error() {
        let err = select(&Fixed("Node 2"), &request(vec![4, 5, 6]), 3).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn grounding_response_strips_prose_and_clamps() {
        let raw = "Sure! ```json\n[{\"bbox_2d\": [10, 20, 30, 40], \"part_index\": 1},\
                   {\"bbox_2d\": [-5, 0, 500, 90], \"part_index\": 0}]\n``` done";
        let boxes = parse_grounding_response(raw, 100, 80).unwrap();
        assert_eq!(boxes.len(), 2);
        assert_eq!(boxes[0].x_min, 10.0);
        assert_eq!(boxes[1].x_min, 0.0);
        assert_eq!(boxes[1].x_max, 99.0);
        assert_eq!(boxes[1].y_max, 79.0);
    }

    #[test]
    fn grounding_garbage_carries_raw_payload() {
        match parse_grounding_response("no boxes here", 10, 10).unwrap_err() {
            Error::Parse { raw, .. } => assert_eq!(raw, "no boxes here"),
            e => panic!("unexpected {e}"),
        }
        assert!(parse_grounding_response("[{\"bbox_2d\": [1,1,2,2], \"part_index\": 3}]", 10, 10).is_err());
    }

    #[test]
    fn degenerate_boxes_are_dropped() {
        let boxes =
            parse_grounding_response("[{\"bbox_2d\": [5,5,5,9], \"part_index\": 1}]", 10, 10).unwrap();
        assert!(boxes.is_empty());
    }

    #[test]
    fn bounded_map_preserves_order() {
        let inputs: Vec<u64> = (0..50).collect();
        let out = map_bounded(&inputs, 4, |&i| {
            std::thread::sleep(std::time::Duration::from_micros((50 - i) * 20));
            i * i
        });
        assert_eq!(out, inputs.iter().map(|i| i * i).collect::<Vec<_>>());
        assert!(map_bounded(&Vec::<u8>::new(), 4, |&i| i).is_empty());
    }
}

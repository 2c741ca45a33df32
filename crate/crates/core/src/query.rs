//! Functional query decomposition into (context label, interaction label, spatial descriptor).

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::backends::prompts::QUERY_PARSING_PROMPT;
use crate::backends::LanguageModel;
use crate::error::{Error, Result};
use crate::scene::normalize_label;

/// Parse attempts against a language model before giving up (1 + 2 retries).
pub const PARSE_ATTEMPTS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionClass {
    Rotate,
    KeyPress,
    TipPush,
    HookPull,
    PinchPull,
    HookTurn,
    FootPush,
    PlugIn,
    Unplug,
}

impl ActionClass {
    pub const ALL: [ActionClass; 9] = [
        ActionClass::Rotate,
        ActionClass::KeyPress,
        ActionClass::TipPush,
        ActionClass::HookPull,
        ActionClass::PinchPull,
        ActionClass::HookTurn,
        ActionClass::FootPush,
        ActionClass::PlugIn,
        ActionClass::Unplug,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ActionClass::Rotate => "rotate",
            ActionClass::KeyPress => "key_press",
            ActionClass::TipPush => "tip_push",
            ActionClass::HookPull => "hook_pull",
            ActionClass::PinchPull => "pinch_pull",
            ActionClass::HookTurn => "hook_turn",
            ActionClass::FootPush => "foot_push",
            ActionClass::PlugIn => "plug_in",
            ActionClass::Unplug => "unplug",
        }
    }
}

impl fmt::Display for ActionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActionClass {
    type Err = Error;

    /// Exact token match; anything outside the closed set is rejected.
    fn from_str(s: &str) -> Result<Self> {
        let token = s.trim();
        ActionClass::ALL
            .into_iter()
            .find(|a| a.as_str() == token)
            .ok_or_else(|| Error::parse(format!("unknown action '{token}'"), s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Top,
    Bottom,
    Left,
    Right,
    Front,
    Back,
}

impl Direction {
    pub fn opposite(self) -> Self {
        match self {
            Direction::Top => Direction::Bottom,
            Direction::Bottom => Direction::Top,
            Direction::Left => Direction::Right,
            Direction::Right => Direction::Left,
            Direction::Front => Direction::Back,
            Direction::Back => Direction::Front,
        }
    }

    fn parse(word: &str) -> Option<Self> {
        Some(match word {
            "top" => Direction::Top,
            "bottom" => Direction::Bottom,
            "left" => Direction::Left,
            "right" => Direction::Right,
            "front" => Direction::Front,
            "back" => Direction::Back,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    LeftOf,
    RightOf,
    Above,
    Below,
    NextTo,
}

/// Qualifier that disambiguates identical instances.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpatialDescriptor {
    #[default]
    None,
    Ordinal {
        rank: u32,
        direction: Direction,
    },
    Relation {
        relation: Relation,
        reference_label: String,
    },
    Nearest {
        reference_label: String,
    },
}

impl SpatialDescriptor {
    /// Label of the reference object the descriptor depends on, if any.
    pub fn reference_label(&self) -> Option<&str> {
        match self {
            SpatialDescriptor::Relation {
                reference_label, ..
            }
            | SpatialDescriptor::Nearest { reference_label } => Some(reference_label),
            _ => None,
        }
    }
}

/// One entry of a query file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryEntry {
    pub query_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedQuery {
    pub context_label: Option<String>,
    pub interaction_label: String,
    pub functional_candidates: Vec<String>,
    pub action: ActionClass,
    pub spatial: SpatialDescriptor,
    pub original_prompt: String,
}

const ORDINAL_WORDS: [&str; 10] = [
    "first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth", "ninth", "tenth",
];

fn ordinal_rank(word: &str) -> Option<u32> {
    if let Some(i) = ORDINAL_WORDS.iter().position(|w| *w == word) {
        return Some(i as u32 + 1);
    }
    let digits = word.trim_end_matches(|c: char| c.is_ascii_alphabetic());
    let suffix = &word[digits.len()..];
    let n: u32 = digits.parse().ok()?;
    let expected = match n {
        1 => "st",
        2 => "nd",
        3 => "rd",
        4..=10 => "th",
        _ => return None,
    };
    (suffix == expected).then_some(n)
}

struct Grammar {
    ordinal: Regex,
    nearest: Regex,
    relation: Regex,
}

fn grammar() -> &'static Grammar {
    static G: OnceLock<Grammar> = OnceLock::new();
    G.get_or_init(|| Grammar {
        ordinal: Regex::new(
            r"\b(first|second|third|fourth|fifth|sixth|seventh|eighth|ninth|tenth|\d+(?:st|nd|rd|th))\b(?:\s+[a-z]+){0,2}?\s+from\s+the\s+(top|bottom|left|right|front|back)\b",
        )
        .unwrap(),
        nearest: Regex::new(r"\b(?:nearest|closest)\s+to\s+the\s+([a-z][a-z0-9 \-]*)").unwrap(),
        relation: Regex::new(
            r"\b(left|right)\s+(?:of|to)\s+the\s+([a-z][a-z0-9 \-]*)|\b(above|below|next\s+to)\s+(?:of\s+|to\s+)?the\s+([a-z][a-z0-9 \-]*)",
        )
        .unwrap(),
    })
}

fn noun_phrase(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Deterministic descriptor grammar. Never fails: unmatched text maps to `None`.
pub fn parse_spatial_descriptor(text: &str) -> SpatialDescriptor {
    let lower = text.to_lowercase();
    let t = lower.trim();
    if t.is_empty() || t == "n/a" {
        return SpatialDescriptor::None;
    }
    let g = grammar();
    if let Some(c) = g.ordinal.captures(t) {
        if let (Some(rank), Some(direction)) = (ordinal_rank(&c[1]), Direction::parse(&c[2])) {
            return SpatialDescriptor::Ordinal { rank, direction };
        }
    }
    if let Some(c) = g.nearest.captures(t) {
        let np = noun_phrase(&c[1]);
        if !np.is_empty() {
            return SpatialDescriptor::Nearest {
                reference_label: np,
            };
        }
    }
    if let Some(c) = g.relation.captures(t) {
        let (word, np) = match (c.get(1), c.get(2), c.get(3), c.get(4)) {
            (Some(w), Some(np), _, _) | (_, _, Some(w), Some(np)) => (w.as_str(), np.as_str()),
            _ => return SpatialDescriptor::None,
        };
        let relation = match word.split_whitespace().next().unwrap_or("") {
            "left" => Relation::LeftOf,
            "right" => Relation::RightOf,
            "above" => Relation::Above,
            "below" => Relation::Below,
            _ => Relation::NextTo,
        };
        let np = noun_phrase(np);
        if !np.is_empty() {
            return SpatialDescriptor::Relation {
                relation,
                reference_label: np,
            };
        }
    }
    SpatialDescriptor::None
}

const INTERACTIVE_VOCAB: &[&str] = &[
    "power button",
    "light switch",
    "door handle",
    "handle",
    "knob",
    "button",
    "switch",
    "socket",
    "outlet",
    "port",
    "keyhole",
    "remote",
    "lever",
    "pedal",
    "faucet",
    "tap",
    "latch",
    "plug",
    "key",
];

const CONTEXT_VOCAB: &[&str] = &[
    "drawer",
    "cabinet",
    "cupboard",
    "wardrobe",
    "dresser",
    "nightstand",
    "door",
    "window",
    "oven",
    "stove",
    "fridge",
    "refrigerator",
    "microwave",
    "dishwasher",
    "sink",
    "toilet",
    "radiator",
    "shelf",
    "desk",
    "table",
    "lamp",
    "television",
    "tv",
    "wall",
    "bin",
];

/// Earliest whole-word vocabulary hit; longer entries win at equal positions.
fn earliest_match<'a>(text: &str, vocab: &[&'a str], exclude: Option<&str>) -> Option<&'a str> {
    let mut best: Option<(usize, usize, &str)> = None;
    for &word in vocab {
        if Some(word) == exclude {
            continue;
        }
        let re = Regex::new(&format!(r"\b{}s?\b", regex::escape(word))).unwrap();
        if let Some(m) = re.find(text) {
            let key = (m.start(), usize::MAX - word.len());
            if best.map_or(true, |(s, l, _)| key < (s, l)) {
                best = Some((key.0, key.1, word));
            }
        }
    }
    best.map(|(_, _, w)| w)
}

fn heuristic_action(text: &str, interaction: &str) -> ActionClass {
    let has = |w: &str| Regex::new(&format!(r"\b{w}")).unwrap().is_match(text);
    if has("unplug") {
        ActionClass::Unplug
    } else if has("plug") || has("insert") {
        ActionClass::PlugIn
    } else if has("pedal") || has("step") || has("foot") {
        ActionClass::FootPush
    } else if has("pinch") {
        ActionClass::PinchPull
    } else if interaction == "key" || interaction == "keyhole" || has("unlock") {
        ActionClass::HookTurn
    } else if has("knob") || has("rotate") || has("turn") || has("dial") {
        ActionClass::Rotate
    } else if has("type") || has("keyboard") {
        ActionClass::KeyPress
    } else if has("press") || interaction.contains("button") || interaction.contains("switch") {
        ActionClass::TipPush
    } else {
        ActionClass::HookPull
    }
}

/// Keyword-driven decomposition used when no language model is configured.
pub fn parse_query_heuristic(q: &str) -> Result<ParsedQuery> {
    if q.trim().is_empty() {
        return Err(Error::Contract("query must be non-empty".into()));
    }
    let lower = q.to_lowercase();
    let spatial = parse_spatial_descriptor(&lower);
    let interaction = earliest_match(&lower, INTERACTIVE_VOCAB, None)
        .map(str::to_string)
        .or_else(|| {
            lower
                .split(|c: char| !c.is_ascii_alphabetic())
                .filter(|w| !w.is_empty())
                .last()
                .map(str::to_string)
        })
        .ok_or_else(|| Error::parse("no interaction label found", q))?;
    let context = earliest_match(&lower, CONTEXT_VOCAB, Some(interaction.as_str())).map(str::to_string);
    let action = heuristic_action(&lower, &interaction);
    Ok(ParsedQuery {
        context_label: context,
        interaction_label: interaction,
        functional_candidates: Vec::new(),
        action,
        spatial,
        original_prompt: q.to_string(),
    })
}

/// Field names of the query-parsing response, in their required order.
pub const RESPONSE_FIELDS: [&str; 6] = [
    "contextual_object",
    "interactive_objects",
    "functional_object_candidates",
    "action",
    "spatial_relation",
    "original_prompt",
];

fn strip_field_prefix(line: &str) -> (Option<usize>, &str) {
    let line = line
        .trim()
        .trim_start_matches(|c: char| c.is_ascii_digit())
        .trim_start_matches(['.', ')'])
        .trim();
    for (i, name) in RESPONSE_FIELDS.iter().enumerate() {
        if let Some(rest) = line.strip_prefix(name) {
            let rest = rest.trim_start();
            let rest = rest.strip_prefix("[X, Y]").unwrap_or(rest).trim_start();
            if let Some(value) = rest.strip_prefix(':').or_else(|| rest.strip_prefix('=')) {
                return (Some(i), value.trim());
            }
        }
    }
    (None, line)
}

fn list_values(value: &str) -> Vec<String> {
    let v = value.trim().trim_start_matches('[').trim_end_matches(']');
    v.split(',')
        .map(|s| s.trim().trim_matches(['"', '\'']).trim())
        .filter(|s| !s.is_empty() && !is_none_token(s))
        .map(normalize_label)
        .collect()
}

fn is_none_token(s: &str) -> bool {
    matches!(s.trim().to_lowercase().as_str(), "none" | "n/a" | "na" | "null" | "")
}

enum ResponseError {
    /// Wrong shape; worth asking again.
    Malformed(String),
    /// Structurally fine but semantically invalid; fail immediately.
    Rejected(Error),
}

fn parse_response(raw: &str, q: &str) -> std::result::Result<ParsedQuery, ResponseError> {
    let lines: Vec<&str> = raw.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut fields: [Option<String>; 6] = Default::default();
    let mut next = 0usize;
    for line in lines {
        let (named, value) = strip_field_prefix(line);
        let slot = named.unwrap_or(next);
        if slot >= RESPONSE_FIELDS.len() {
            break;
        }
        if fields[slot].is_none() {
            fields[slot] = Some(value.to_string());
        }
        next = slot + 1;
    }
    let missing: Vec<&str> = (0..5)
        .filter(|&i| fields[i].is_none())
        .map(|i| RESPONSE_FIELDS[i])
        .collect();
    if !missing.is_empty() {
        return Err(ResponseError::Malformed(format!(
            "response lacks field(s) {}",
            missing.join(", ")
        )));
    }
    let get = |i: usize| fields[i].as_deref().unwrap_or("");

    let context = list_values(get(0)).into_iter().next();
    let mut interactive = list_values(get(1));
    if interactive.is_empty() {
        return Err(ResponseError::Malformed("no interactive object listed".into()));
    }
    let interaction = interactive.remove(0);
    let mut candidates = interactive;
    for c in list_values(get(2)) {
        if !candidates.contains(&c) && c != interaction {
            candidates.push(c);
        }
    }
    let action_token = get(3).trim().trim_matches(['"', '\'', '[', ']']).to_lowercase();
    let action = ActionClass::from_str(&action_token).map_err(|_| {
        ResponseError::Rejected(Error::parse(format!("unknown action '{action_token}'"), raw))
    })?;

    let mut spatial = parse_spatial_descriptor(q);
    if spatial == SpatialDescriptor::None {
        let pair = list_values(get(4));
        if let [_, reference] = pair.as_slice() {
            spatial = SpatialDescriptor::Nearest {
                reference_label: reference.clone(),
            };
        }
    }
    Ok(ParsedQuery {
        context_label: context,
        interaction_label: interaction,
        functional_candidates: candidates,
        action,
        spatial,
        original_prompt: q.to_string(),
    })
}

/// Decomposes a query, through a language model when one is given.
pub fn parse_query(q: &str, backend: Option<&dyn LanguageModel>) -> Result<ParsedQuery> {
    if q.trim().is_empty() {
        return Err(Error::Contract("query must be non-empty".into()));
    }
    let Some(lm) = backend else {
        return parse_query_heuristic(q);
    };
    let mut last = (String::new(), String::new());
    for _ in 0..PARSE_ATTEMPTS {
        let raw = lm.complete(QUERY_PARSING_PROMPT, q, &[])?;
        match parse_response(&raw, q) {
            Ok(parsed) => return Ok(parsed),
            Err(ResponseError::Rejected(e)) => return Err(e),
            Err(ResponseError::Malformed(msg)) => last = (msg, raw),
        }
    }
    Err(Error::Parse {
        message: format!("query parsing failed after {PARSE_ATTEMPTS} attempts: {}", last.0),
        raw: last.1,
        offset: None,
    })
}

/// Renders a parse in the line-oriented response format the parser accepts.
pub fn format_response(p: &ParsedQuery) -> String {
    let spatial = match p.spatial.reference_label() {
        Some(r) => format!(
            "[{}, {}]",
            p.context_label.as_deref().unwrap_or(&p.interaction_label),
            r
        ),
        None => "N/A".to_string(),
    };
    let candidates = if p.functional_candidates.is_empty() {
        "None".to_string()
    } else {
        p.functional_candidates.join(", ")
    };
    format!(
        "contextual_object: {}\ninteractive_objects: {}\nfunctional_object_candidates: {}\naction: {}\nspatial_relation: {}\noriginal_prompt: {}\n",
        p.context_label.as_deref().unwrap_or("None"),
        p.interaction_label,
        candidates,
        p.action,
        spatial,
        p.original_prompt
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    struct Scripted {
        reply: String,
        calls: AtomicU32,
    }

    impl Scripted {
        fn new(reply: &str) -> Self {
            Scripted {
                reply: reply.into(),
                calls: AtomicU32::new(0),
            }
        }
    }

    impl LanguageModel for Scripted {
        fn complete(&self, system: &str, user: &str, _images: &[image::RgbImage]) -> Result<String> {
            assert_eq!(system, QUERY_PARSING_PROMPT);
            assert!(!user.is_empty());
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(self.reply.clone())
        }
    }

    #[test]
    fn worked_example_decomposes() {
        let p = parse_query("the handle of the second drawer from the top", None).unwrap();
        assert_eq!(p.context_label.as_deref(), Some("drawer"));
        assert_eq!(p.interaction_label, "handle");
        assert_eq!(
            p.spatial,
            SpatialDescriptor::Ordinal {
                rank: 2,
                direction: Direction::Top
            }
        );
    }

    #[test]
    fn grammar_cases() {
        assert_eq!(
            parse_spatial_descriptor("second from the top"),
            SpatialDescriptor::Ordinal { rank: 2, direction: Direction::Top }
        );
        assert_eq!(
            parse_spatial_descriptor("the 3rd knob from the left"),
            SpatialDescriptor::Ordinal { rank: 3, direction: Direction::Left }
        );
        assert_eq!(
            parse_spatial_descriptor("left of the window"),
            SpatialDescriptor::Relation {
                relation: Relation::LeftOf,
                reference_label: "window".into()
            }
        );
        assert_eq!(
            parse_spatial_descriptor("the switch next to the door"),
            SpatialDescriptor::Relation {
                relation: Relation::NextTo,
                reference_label: "door".into()
            }
        );
        assert_eq!(
            parse_spatial_descriptor("the handle nearest to the lamp"),
            SpatialDescriptor::Nearest { reference_label: "lamp".into() }
        );
        assert_eq!(parse_spatial_descriptor("N/A"), SpatialDescriptor::None);
        assert_eq!(parse_spatial_descriptor("open it"), SpatialDescriptor::None);
        assert_eq!(parse_spatial_descriptor("11th from the top"), SpatialDescriptor::None);
        assert_eq!(parse_spatial_descriptor("2th from the top"), SpatialDescriptor::None);
    }

    #[test]
    fn backend_response_is_passed_through() {
        let lm = Scripted::new(
            "contextual_object: tv\ninteractive_objects: power button\nfunctional_object_candidates: [power button, remote]\naction: tip_push\nspatial_relation [X, Y]: N/A\noriginal_prompt: press the power button\n",
        );
        let p = parse_query("press the power button", Some(&lm)).unwrap();
        assert_eq!(p.action, ActionClass::TipPush);
        assert_eq!(p.interaction_label, "power button");
        assert_eq!(p.functional_candidates, vec!["remote".to_string()]);
        assert_eq!(p.original_prompt, "press the power button");
        assert_eq!(lm.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn positional_response_without_field_names() {
        let lm = Scripted::new("drawer\nhandle, knob\nNone\nhook_pull\n[drawer, window]\nx\n");
        let p = parse_query("open the drawer by the window", Some(&lm)).unwrap();
        assert_eq!(p.context_label.as_deref(), Some("drawer"));
        assert_eq!(p.interaction_label, "handle");
        assert_eq!(p.functional_candidates, vec!["knob".to_string()]);
        assert_eq!(
            p.spatial,
            SpatialDescriptor::Nearest { reference_label: "window".into() }
        );
    }

    #[test]
    fn unknown_action_is_rejected_not_coerced() {
        let lm = Scripted::new("None\nhandle\nNone\nyank\nN/A\nq\n");
        let err = parse_query("yank the handle", Some(&lm)).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        assert_eq!(lm.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn malformed_response_is_retried_then_fails_with_raw() {
        let lm = Scripted::new("I think you should open it.");
        match parse_query("open it", Some(&lm)).unwrap_err() {
            Error::Parse { raw, .. } => assert_eq!(raw, "I think you should open it."),
            other => panic!("unexpected {other}"),
        }
        assert_eq!(lm.calls.load(Ordering::SeqCst), PARSE_ATTEMPTS);
    }

    #[test]
    fn empty_query_is_a_contract_violation() {
        assert!(matches!(parse_query("", None), Err(Error::Contract(_))));
        assert!(matches!(parse_query("   ", None), Err(Error::Contract(_))));
    }

    #[test]
    fn formatted_response_parses_back() {
        let p = parse_query_heuristic("the handle nearest to the lamp").unwrap();
        let lm = Scripted::new(&format_response(&p));
        assert_eq!(parse_query(&p.original_prompt, Some(&lm)).unwrap(), p);
    }

    #[test]
    fn action_tokens_roundtrip() {
        for a in ActionClass::ALL {
            assert_eq!(a.as_str().parse::<ActionClass>().unwrap(), a);
        }
        assert!("Rotate".parse::<ActionClass>().is_err());
    }
}

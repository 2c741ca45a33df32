//! Stage orchestration: parse, ground, fuse, graph, select, eval.
//!
//! Every stage artifact is cached per query under a key derived from the
//! scene content, the memory bank, the configuration and the backend
//! identity. Human-readable copies go to the output directory.

use std::cell::{OnceCell, RefCell};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use afford_core::backends::{ground, map_bounded, segment_by_box, select, BoundingBox2D, GroundingRequest, SelectionRequest};
use afford_core::eval::{build_report, format_table, EvalRecord, MetricsReport};
use afford_core::fusion::{fuse, VisibilityIndex};
use afford_core::graph::{build_graph, extract_crops, parse_graph, render_topdown, render_topdown_raster, resolve_spatial, serialize_graph};
use afford_core::persist::{load_artifact, persist_artifact};
use afford_core::query::{parse_query, ParsedQuery, QueryEntry};
use afford_core::scene::normalize_label;
use afford_core::scene_io::{load_annotations, load_scene, read_manifest};
use afford_core::{Candidate3D, Error, Mask, MemoryBank, PointSet, SceneGraph, SceneSequence};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::backend::Backends;
use crate::cache::{digest, hash_tree, StageCache};
use crate::config::{PipelineConfig, SelectionMode};
use crate::error::{PipelineError, Result};

/// Bumped whenever an artifact layout changes, invalidating old caches.
const CACHE_VERSION: &str = "afford-cache-1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, clap::ValueEnum)]
pub enum Stage {
    Parse,
    Ground,
    Fuse,
    Graph,
    Select,
    Eval,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Parse => "parse",
            Stage::Ground => "ground",
            Stage::Fuse => "fuse",
            Stage::Graph => "graph",
            Stage::Select => "select",
            Stage::Eval => "eval",
        }
    }
}

/// Whether upstream stages may be computed or must come from the cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Through,
    Only,
}

/// One scene to run: its on-disk root, its queries and, for evaluation only,
/// the ground-truth file.
#[derive(Debug, Clone)]
pub struct SceneInput {
    pub scene_dir: PathBuf,
    pub queries: Vec<QueryEntry>,
    pub gt_path: Option<PathBuf>,
}

pub struct BankRef<'a> {
    pub bank: &'a MemoryBank,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameBoxes {
    pub frame: u32,
    pub boxes: Vec<BoundingBox2D>,
}

pub type FrameMasks = Vec<(u32, Vec<Mask>)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundArtifact {
    /// Grounded boxes per frame; empty when memory is ablated.
    pub boxes: Vec<FrameBoxes>,
    pub interaction: FrameMasks,
    pub context: BTreeMap<String, FrameMasks>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuseArtifact {
    pub interaction: Vec<Candidate3D>,
    pub context: Vec<(String, Vec<Candidate3D>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphArtifact {
    pub graph_json: String,
    pub svg: String,
    pub points: BTreeMap<usize, PointSet>,
    pub crop_frames: BTreeMap<usize, u32>,
    pub crop_warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionArtifact {
    pub query_id: String,
    pub node_id: Option<usize>,
    /// `backend`, `resolver`, `single`, `largest-support` or `none`.
    pub method: String,
    pub warning: Option<String>,
    pub point_indices: Option<PointSet>,
}

#[derive(Debug, Clone)]
pub struct QueryOutcome {
    pub query_id: String,
    pub parsed: ParsedQuery,
    pub selection: Option<SelectionArtifact>,
    pub record: Option<EvalRecord>,
}

#[derive(Debug, Clone)]
pub struct SceneOutcome {
    pub scene_id: String,
    pub queries: Vec<QueryOutcome>,
}

impl SceneOutcome {
    pub fn records(&self) -> Vec<EvalRecord> {
        self.queries.iter().filter_map(|q| q.record.clone()).collect()
    }
}

pub struct Runner<'a> {
    pub config: &'a PipelineConfig,
    pub backends: &'a Backends,
    pub bank: Option<BankRef<'a>>,
    pub cache: &'a StageCache,
    pub out_dir: Option<&'a Path>,
}

/// Per-scene state shared by all queries of one run.
struct SceneState<'s> {
    scene: &'s SceneSequence,
    base_key: String,
    visibility: OnceCell<VisibilityIndex>,
    context_masks: RefCell<BTreeMap<String, FrameMasks>>,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Labels of the context objects a query needs in its graph.
pub fn context_labels(parsed: &ParsedQuery) -> Vec<String> {
    let interaction = normalize_label(&parsed.interaction_label);
    let mut labels: Vec<String> = parsed
        .context_label
        .iter()
        .map(String::as_str)
        .chain(parsed.spatial.reference_label())
        .map(normalize_label)
        .filter(|l| !l.is_empty() && *l != interaction)
        .collect();
    labels.sort();
    labels.dedup();
    labels
}

/// Best-supported candidate; ties keep the earlier (larger) one.
fn largest_support(candidates: &[Candidate3D]) -> Option<&Candidate3D> {
    candidates
        .iter()
        .reduce(|best, c| if c.support > best.support { c } else { best })
}

impl Runner<'_> {
    /// Runs the stages up to `target` for every query of one scene.
    pub fn run_scene(&self, input: &SceneInput, target: Stage, mode: Mode) -> Result<SceneOutcome> {
        let manifest = read_manifest(&input.scene_dir)?;
        if let Some(b) = &self.bank {
            if b.bank.source_scene_ids.contains(&manifest.scene_id) {
                return Err(PipelineError::Leakage {
                    scene_id: manifest.scene_id,
                });
            }
        }
        let scene = load_scene::<f64>(&input.scene_dir)?;
        let scene_fp = hash_tree(&input.scene_dir)?;
        let bank_fp = self.bank.as_ref().map_or("none", |b| b.fingerprint.as_str());
        let state = SceneState {
            scene: &scene,
            base_key: digest(&[
                CACHE_VERSION.as_bytes(),
                scene_fp.as_bytes(),
                bank_fp.as_bytes(),
                self.config.fingerprint_json().as_bytes(),
                self.backends.id.as_bytes(),
            ]),
            visibility: OnceCell::new(),
            context_masks: RefCell::new(BTreeMap::new()),
        };
        let gt = if target >= Stage::Eval {
            let path = input.gt_path.as_ref().ok_or_else(|| {
                Error::Validation(format!("evaluating scene '{}' needs a ground-truth file", scene.scene_id))
            })?;
            Some(load_artifact::<BTreeMap<String, PointSet>>(path)?)
        } else {
            None
        };

        let mut queries = Vec::with_capacity(input.queries.len());
        for q in &input.queries {
            info!("{} / {}: {}", scene.scene_id, q.query_id, q.text);
            let out = self.query_out_dir(&scene.scene_id, &q.query_id);
            let parsed = self.stage(&state, Stage::Parse, target, mode, q, || {
                Ok(parse_query(&q.text, self.backends.language.as_deref())?)
            })?;
            self.emit(&out, "parse.json", &parsed)?;
            let mut outcome = QueryOutcome {
                query_id: q.query_id.clone(),
                parsed: parsed.clone(),
                selection: None,
                record: None,
            };
            if target >= Stage::Ground {
                let grounded = self.stage(&state, Stage::Ground, target, mode, q, || self.ground(&state, &parsed))?;
                self.emit_ground(&out, &grounded)?;
                if target >= Stage::Fuse {
                    let fused = self.stage(&state, Stage::Fuse, target, mode, q, || self.fuse(&state, &grounded))?;
                    self.emit_fuse(&out, &fused)?;
                    if target >= Stage::Graph {
                        let graph = self.stage(&state, Stage::Graph, target, mode, q, || self.graph(&state, &parsed, &fused))?;
                        if let Some(g) = &graph {
                            self.emit_graph(&state, &out, g)?;
                        }
                        if target >= Stage::Select {
                            let selection = self.stage(&state, Stage::Select, target, mode, q, || {
                                self.select(&state, q, &parsed, &fused, graph.as_ref())
                            })?;
                            self.emit(&out, "selection.json", &selection)?;
                            outcome.selection = Some(selection);
                        }
                    }
                }
            }
            if let (Some(gt), Some(sel)) = (&gt, &outcome.selection) {
                let truth = gt.get(&q.query_id).cloned().ok_or_else(|| {
                    Error::Validation(format!("no ground truth for query '{}'", q.query_id))
                })?;
                outcome.record = Some(EvalRecord::new(
                    q.query_id.clone(),
                    scene.scene_id.clone(),
                    sel.point_indices.clone(),
                    truth,
                ));
            }
            queries.push(outcome);
        }
        let outcome = SceneOutcome {
            scene_id: scene.scene_id.clone(),
            queries,
        };
        if gt.is_some() && !outcome.queries.is_empty() {
            if let Some(dir) = self.out_dir {
                write_report(&dir.join(&scene.scene_id), &build_report(outcome.records())?)?;
            }
        }
        Ok(outcome)
    }

    fn query_out_dir(&self, scene_id: &str, query_id: &str) -> Option<PathBuf> {
        self.out_dir.map(|d| d.join(scene_id).join(query_id))
    }

    fn emit<A: Serialize>(&self, dir: &Option<PathBuf>, name: &str, artifact: &A) -> Result<()> {
        if let Some(d) = dir {
            persist_artifact(artifact, &d.join(name))?;
        }
        Ok(())
    }

    fn stage<A, F>(&self, state: &SceneState<'_>, stage: Stage, target: Stage, mode: Mode, q: &QueryEntry, compute: F) -> Result<A>
    where
        A: Serialize + for<'de> Deserialize<'de>,
        F: FnOnce() -> Result<A>,
    {
        let key = digest(&[
            state.base_key.as_bytes(),
            stage.name().as_bytes(),
            q.query_id.as_bytes(),
            q.text.as_bytes(),
        ]);
        if let Some(a) = self.cache.load(stage.name(), &key)? {
            return Ok(a);
        }
        if mode == Mode::Only && stage < target {
            return Err(PipelineError::MissingStage {
                stage: stage.name(),
                query_id: q.query_id.clone(),
            });
        }
        let artifact = compute()?;
        self.cache.store(stage.name(), &key, &artifact)?;
        Ok(artifact)
    }

    fn text_masks(&self, scene: &SceneSequence, label: &str) -> Result<FrameMasks> {
        let results = map_bounded(&scene.frames, self.config.concurrency, |f| {
            self.backends
                .segmenter
                .segment_by_text(&scene.scene_id, f, label)
                .map(|m| (f.index, m))
        });
        Ok(results.into_iter().collect::<afford_core::Result<_>>()?)
    }

    fn ground(&self, state: &SceneState<'_>, parsed: &ParsedQuery) -> Result<GroundArtifact> {
        let scene = state.scene;
        let label = normalize_label(&parsed.interaction_label);
        let ab = self.config.ablations;
        let (boxes, interaction) = if ab.no_memory {
            (Vec::new(), self.text_masks(scene, &label)?)
        } else {
            let bank = self.bank.as_ref().ok_or_else(|| {
                Error::Validation("grounding needs a memory bank unless memory is ablated".into())
            })?;
            let exemplars = bank.bank.recall(&label);
            if exemplars.is_empty() {
                warn!("memory bank has no exemplars for '{label}'");
            }
            let results = map_bounded(&scene.frames, self.config.concurrency, |f| {
                let request = GroundingRequest {
                    scene_id: &scene.scene_id,
                    query_frame: f,
                    exemplars,
                    interaction_label: &label,
                    instruction: &parsed.original_prompt,
                    adversarial: !ab.no_adversarial,
                };
                let boxes = ground(self.backends.grounder.as_ref(), &request)?;
                let masks = boxes
                    .iter()
                    .filter(|b| b.is_positive())
                    .map(|b| segment_by_box(self.backends.segmenter.as_ref(), &scene.scene_id, f, b))
                    .collect::<afford_core::Result<Vec<_>>>()?;
                Ok((FrameBoxes { frame: f.index, boxes }, (f.index, masks)))
            });
            results
                .into_iter()
                .collect::<afford_core::Result<Vec<_>>>()?
                .into_iter()
                .unzip()
        };
        let mut context = BTreeMap::new();
        if !ab.no_graph {
            for l in context_labels(parsed) {
                let cached = state.context_masks.borrow().get(&l).cloned();
                let masks = match cached {
                    Some(m) => m,
                    None => {
                        let m = self.text_masks(scene, &l)?;
                        state.context_masks.borrow_mut().insert(l.clone(), m.clone());
                        m
                    }
                };
                context.insert(l, masks);
            }
        }
        Ok(GroundArtifact {
            boxes,
            interaction,
            context,
        })
    }

    fn fuse(&self, state: &SceneState<'_>, grounded: &GroundArtifact) -> Result<FuseArtifact> {
        let scene = state.scene;
        let params = self.config.fusion();
        let visibility = state
            .visibility
            .get_or_init(|| VisibilityIndex::compute(&scene.cloud, &scene.frames, &params.filter));
        let interaction = fuse(&scene.cloud, visibility, &grounded.interaction, &params)?.candidates;
        let context = grounded
            .context
            .iter()
            .map(|(l, m)| Ok((l.clone(), fuse(&scene.cloud, visibility, m, &params)?.candidates)))
            .collect::<afford_core::Result<_>>()?;
        Ok(FuseArtifact {
            interaction,
            context,
        })
    }

    fn graph(&self, state: &SceneState<'_>, parsed: &ParsedQuery, fused: &FuseArtifact) -> Result<Option<GraphArtifact>> {
        if self.config.ablations.no_graph {
            return Ok(None);
        }
        let scene = state.scene;
        let graph = build_graph(
            &scene.scene_id,
            &fused.interaction,
            &parsed.interaction_label,
            &fused.context,
            scene.up_axis,
        );
        let crops = extract_crops(&graph, scene, &self.config.depth_filter(), &self.config.weights());
        Ok(Some(GraphArtifact {
            graph_json: serialize_graph(&graph),
            svg: render_topdown(&graph, &scene.cloud),
            points: graph.nodes.iter().map(|n| (n.node_id, n.point_indices.clone())).collect(),
            crop_frames: crops.source_frames,
            crop_warnings: crops.warnings,
        }))
    }

    fn restore_graph(artifact: &GraphArtifact) -> Result<SceneGraph> {
        let mut graph: SceneGraph = parse_graph(&artifact.graph_json)?;
        for n in &mut graph.nodes {
            n.point_indices = artifact.points.get(&n.node_id).cloned().unwrap_or_default();
        }
        Ok(graph)
    }

    fn select(
        &self,
        state: &SceneState<'_>,
        q: &QueryEntry,
        parsed: &ParsedQuery,
        fused: &FuseArtifact,
        graph: Option<&GraphArtifact>,
    ) -> Result<SelectionArtifact> {
        let mut out = SelectionArtifact {
            query_id: q.query_id.clone(),
            node_id: None,
            method: "none".into(),
            warning: None,
            point_indices: None,
        };
        let Some(artifact) = graph else {
            if let Some(c) = largest_support(&fused.interaction) {
                out.method = "largest-support".into();
                out.point_indices = Some(c.point_indices.clone());
            } else {
                out.warning = Some("no interactive candidate was fused".into());
            }
            return Ok(out);
        };
        let graph = Self::restore_graph(artifact)?;
        let label = normalize_label(&parsed.interaction_label);
        let ids: Vec<usize> = graph.interactive(&label).iter().map(|n| n.node_id).collect();
        let chosen = match ids.len() {
            0 => {
                out.warning = Some(format!("no '{label}' node in the graph"));
                return Ok(out);
            }
            1 => {
                out.method = "single".into();
                ids[0]
            }
            n => match self.config.selection {
                SelectionMode::Resolver => {
                    out.method = "resolver".into();
                    let r = resolve_spatial(&graph, &parsed.spatial, &label)?;
                    out.warning = r.warning;
                    r.node_id
                }
                SelectionMode::Backend => {
                    out.method = "backend".into();
                    let crops = extract_crops(&graph, state.scene, &self.config.depth_filter(), &self.config.weights());
                    let request = SelectionRequest {
                        graph_json: artifact.graph_json.clone(),
                        topdown_render: render_topdown_raster(&graph, &state.scene.cloud),
                        node_crops: crops.crops,
                        instruction: parsed.original_prompt.clone(),
                        candidate_ids: ids.clone(),
                    };
                    select(self.backends.selector.as_ref(), &request, n)?
                }
            },
        };
        out.node_id = Some(chosen);
        out.point_indices = graph.node(chosen).map(|n| n.point_indices.clone());
        Ok(out)
    }

    fn emit_ground(&self, dir: &Option<PathBuf>, g: &GroundArtifact) -> Result<()> {
        #[derive(Serialize)]
        struct Summary<'a> {
            boxes: &'a [FrameBoxes],
            interaction_pixels: Vec<(u32, Vec<usize>)>,
            context_pixels: BTreeMap<&'a str, Vec<(u32, Vec<usize>)>>,
        }
        let counts = |m: &FrameMasks| -> Vec<(u32, Vec<usize>)> {
            m.iter().map(|(f, ms)| (*f, ms.iter().map(Mask::count).collect())).collect()
        };
        self.emit(
            dir,
            "ground.json",
            &Summary {
                boxes: &g.boxes,
                interaction_pixels: counts(&g.interaction),
                context_pixels: g.context.iter().map(|(k, v)| (k.as_str(), counts(v))).collect(),
            },
        )
    }

    fn emit_fuse(&self, dir: &Option<PathBuf>, f: &FuseArtifact) -> Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            label: &'a str,
            points: usize,
            support: u32,
            centroid: [f64; 3],
            aabb_min: [f64; 3],
            aabb_max: [f64; 3],
        }
        let v = |p: afford_core::Vec3| [p.x, p.y, p.z];
        let rows: Vec<Row<'_>> = std::iter::once(("interaction", &f.interaction))
            .chain(f.context.iter().map(|(l, c)| (l.as_str(), c)))
            .flat_map(|(label, cs)| {
                cs.iter().map(move |c| Row {
                    label,
                    points: c.len(),
                    support: c.support,
                    centroid: v(c.centroid),
                    aabb_min: v(c.aabb.min),
                    aabb_max: v(c.aabb.max),
                })
            })
            .collect();
        self.emit(dir, "candidates.json", &rows)
    }

    fn emit_graph(&self, state: &SceneState<'_>, dir: &Option<PathBuf>, g: &GraphArtifact) -> Result<()> {
        let Some(d) = dir else { return Ok(()) };
        write_text(&d.join("graph.json"), &g.graph_json)?;
        write_text(&d.join("topdown.svg"), &g.svg)?;
        let graph = Self::restore_graph(g)?;
        let crops = extract_crops(&graph, state.scene, &self.config.depth_filter(), &self.config.weights());
        let crop_dir = d.join("crops");
        fs::create_dir_all(&crop_dir).map_err(|e| Error::io(&crop_dir, e))?;
        for (id, img) in &crops.crops {
            let path = crop_dir.join(format!("node_{id}.png"));
            img.save(&path).map_err(|e| Error::io(&path, std::io::Error::other(e.to_string())))?;
        }
        Ok(())
    }
}

/// Writes `metrics.json` and `metrics.txt` into `dir`.
pub fn write_report(dir: &Path, report: &MetricsReport) -> Result<()> {
    persist_artifact(report, &dir.join("metrics.json"))?;
    write_text(&dir.join("metrics.txt"), &format_table(report))
}

/// A source scene for the memory bank with its annotation file.
#[derive(Debug, Clone)]
pub struct MemorySource {
    pub scene_dir: PathBuf,
    pub annotations: PathBuf,
}

pub fn build_memory(sources: &[MemorySource], config: &PipelineConfig) -> Result<MemoryBank> {
    let mut scenes = BTreeMap::new();
    let mut annotations = Vec::new();
    for s in sources {
        let scene = load_scene::<f64>(&s.scene_dir)?;
        annotations.extend(load_annotations(&s.annotations, &scene.scene_id, Some(scene.cloud.len()))?);
        if scenes.insert(scene.scene_id.clone(), scene).is_some() {
            return Err(Error::Validation("duplicate source scene".into()).into());
        }
    }
    Ok(afford_core::memory::build_memory_bank(&annotations, &scenes, &config.memory())?)
}

//! Analytic desk-scale scenes: boxes rendered by exact ray casting, with
//! ground-truth handle annotations and ordinal/relational queries.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose};
use crate::linalg::{Aabb, Vec3};
use crate::persist::persist_artifact;
use crate::pointset::PointSet;
use crate::query::QueryEntry;
use crate::raster::DepthMap;
use crate::scene::{AffordanceAnnotation, Frame, PointCloud, SceneSequence};
use crate::scene_io::{write_annotations, write_scene, DepthUnit};

pub const SCENARIO_FILE: &str = "scenario.json";
pub const QUERIES_FILE: &str = "queries.json";
pub const GT_FILE: &str = "gt.json";
pub const ANNOTATIONS_FILE: &str = "annotations.json";
pub const SCENE_DIR: &str = "scene";

/// Overlap tolerance when testing whether a surface sample is buried in another box.
const BURY_TOLERANCE: f64 = 1e-9;
/// Front panel thickness and spacing of drawer fronts.
const PANEL_DEPTH: f64 = 0.02;
const PANEL_MARGIN: f64 = 0.02;
const PANEL_GAP: f64 = 0.04;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CabinetSpec {
    /// Minimum corner; the front face lies at `origin.y`.
    pub origin: [f64; 3],
    /// Width (x), depth (y), height (z).
    pub size: [f64; 3],
    pub drawers: usize,
    /// Handle width (x), protrusion (y), height (z).
    pub handle_size: [f64; 3],
    /// Per-drawer lateral handle offsets from the panel centre; missing entries are 0.
    #[serde(default)]
    pub handle_offsets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitSpec {
    pub radius: f64,
    /// Camera heights, cycled frame by frame.
    pub heights: Vec<f64>,
    pub frame_count: usize,
    /// Total horizontal sweep in degrees, centred on the cabinet front.
    pub arc_degrees: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    pub seed: u64,
    pub scene_id: String,
    pub cabinet: CabinetSpec,
    pub lamp: Option<Aabb<f64>>,
    pub occluder: Option<Aabb<f64>>,
    /// Add a wall behind everything as a depth backdrop.
    pub backdrop: bool,
    pub orbit: OrbitSpec,
    pub image_width: u32,
    pub image_height: u32,
    /// Focal length as a multiple of image width.
    pub focal_scale: f64,
    pub point_spacing: f64,
    pub backdrop_spacing: f64,
}

impl SyntheticSceneSpec {
    /// Randomised single-cabinet scene with a lamp beside one of the drawers.
    pub fn desk(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let drawers = rng.gen_range(3..=4);
        let width = rng.gen_range(0.55..0.7);
        let height = 0.22 * drawers as f64 + rng.gen_range(0.0..0.08);
        let depth = rng.gen_range(0.35..0.45);
        let origin = [-width / 2.0, 0.0, 0.0];
        let spec = CabinetSpec {
            origin,
            size: [width, depth, height],
            drawers,
            handle_size: [0.12, 0.05, 0.025],
            handle_offsets: Vec::new(),
        };
        let lamp_drawer = rng.gen_range(0..drawers);
        let (z0, z1) = drawer_span(&spec, lamp_drawer);
        let zc = (z0 + z1) / 2.0;
        let x0 = width / 2.0 + 0.1;
        let lamp = Aabb::new(
            Vec3::new(x0, 0.05, zc - 0.075),
            Vec3::new(x0 + 0.15, 0.2, zc + 0.075),
        );
        SyntheticSceneSpec {
            seed,
            scene_id: format!("synth-{seed:04}"),
            cabinet: spec,
            lamp: Some(lamp),
            occluder: None,
            backdrop: true,
            orbit: OrbitSpec {
                radius: 1.3,
                heights: vec![1.25, 0.05],
                frame_count: 24,
                arc_degrees: 100.0,
            },
            image_width: 320,
            image_height: 240,
            focal_scale: 0.9,
            point_spacing: 0.01,
            backdrop_spacing: 0.02,
        }
    }

    /// The desk scene plus a thin post standing between the cameras and the
    /// cabinet. The post is narrower than a handle, so in any frame it hides
    /// only part of each handle.
    pub fn occluded(seed: u64) -> Self {
        let mut spec = Self::desk(seed);
        let h = spec.cabinet.size[2];
        spec.occluder = Some(Aabb::new(
            Vec3::new(-0.02, -0.45, 0.0),
            Vec3::new(0.02, -0.35, h + 0.1),
        ));
        spec.scene_id = format!("synth-occ-{seed:04}");
        spec
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.cabinet;
        let bad = |m: String| Err(Error::Validation(m));
        if self.scene_id.trim().is_empty() {
            return bad("scene id is empty".into());
        }
        if c.size.iter().any(|&s| !(s > 0.0)) || c.handle_size.iter().any(|&s| !(s > 0.0)) {
            return bad("cabinet and handle sizes must be positive".into());
        }
        if c.drawers == 0 {
            return bad("cabinet needs at least one drawer".into());
        }
        if panel_height(c) <= 0.0 {
            return bad(format!("{} drawers do not fit a {} m cabinet", c.drawers, c.size[2]));
        }
        if self.orbit.frame_count == 0 || self.orbit.heights.is_empty() || !(self.orbit.radius > 0.0) {
            return bad("orbit needs frames, heights and a positive radius".into());
        }
        if self.image_width < 2 || self.image_height < 2 || !(self.focal_scale > 0.0) {
            return bad("image size and focal scale must be positive".into());
        }
        if !(self.point_spacing > 0.0) || !(self.backdrop_spacing > 0.0) {
            return bad("sampling spacing must be positive".into());
        }
        let handles = handle_boxes(c);
        for i in 0..handles.len() {
            for j in i + 1..handles.len() {
                if handles[i].intersects(&handles[j]) {
                    return bad(format!("handles {i} and {j} overlap"));
                }
            }
        }
        let cabinet = cabinet_box(c);
        let extras: Vec<Aabb<f64>> = self.lamp.iter().chain(self.occluder.iter()).copied().collect();
        for (i, e) in extras.iter().enumerate() {
            if e.intersects(&cabinet)
                || handles.iter().any(|h| h.intersects(e))
                || extras[i + 1..].iter().any(|o| o.intersects(e))
            {
                return bad("lamp or occluder intersects other geometry".into());
            }
        }
        let reach = self.orbit.radius * 4.0;
        let all = std::iter::once(&cabinet).chain(&extras).chain(&handles);
        for b in all {
            if b.corners().iter().any(|p| p.norm() > reach) {
                return bad("geometry lies outside the camera range".into());
            }
        }
        Ok(())
    }
}

fn cabinet_box(c: &CabinetSpec) -> Aabb<f64> {
    let o = Vec3::from(c.origin);
    Aabb::new(o, o + Vec3::from(c.size))
}

fn panel_height(c: &CabinetSpec) -> f64 {
    let n = c.drawers as f64;
    (c.size[2] - 2.0 * PANEL_MARGIN - (n - 1.0) * PANEL_GAP) / n
}

/// Vertical extent of drawer `i`, counted from the top.
fn drawer_span(c: &CabinetSpec, i: usize) -> (f64, f64) {
    let ph = panel_height(c);
    let top = c.origin[2] + c.size[2] - PANEL_MARGIN - i as f64 * (ph + PANEL_GAP);
    (top - ph, top)
}

fn drawer_boxes(c: &CabinetSpec) -> Vec<Aabb<f64>> {
    let y = c.origin[1];
    (0..c.drawers)
        .map(|i| {
            let (z0, z1) = drawer_span(c, i);
            Aabb::new(
                Vec3::new(c.origin[0] + PANEL_MARGIN, y - PANEL_DEPTH, z0),
                Vec3::new(c.origin[0] + c.size[0] - PANEL_MARGIN, y, z1),
            )
        })
        .collect()
}

fn handle_boxes(c: &CabinetSpec) -> Vec<Aabb<f64>> {
    let [hw, hp, hh] = c.handle_size;
    drawer_boxes(c)
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let center = d.center();
            let cx = center.x + c.handle_offsets.get(i).copied().unwrap_or(0.0);
            let y = d.min.y;
            Aabb::new(
                Vec3::new(cx - hw / 2.0, y - hp, center.z - hh / 2.0),
                Vec3::new(cx + hw / 2.0, y, center.z + hh / 2.0),
            )
        })
        .collect()
}

/// One scene object; ids are positions in [`Scenario::instances`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioInstance {
    pub id: usize,
    pub label: String,
    pub parent: Option<usize>,
    pub aabb: Aabb<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioQuery {
    pub query_id: String,
    pub text: String,
    pub target: usize,
    /// Mean of the target's ground-truth points.
    pub target_centroid: Vec3<f64>,
}

/// Ground truth the oracle backends answer from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub scene_id: String,
    pub instances: Vec<ScenarioInstance>,
    pub queries: Vec<ScenarioQuery>,
}

impl Scenario {
    pub fn boxes(&self) -> Vec<Aabb<f64>> {
        self.instances.iter().map(|i| i.aabb).collect()
    }

    /// The instance and all of its ancestors.
    pub fn lineage(&self, id: usize) -> Vec<usize> {
        let mut out = vec![id];
        let mut cur = self.instances[id].parent;
        while let Some(p) = cur {
            out.push(p);
            cur = self.instances[p].parent;
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticQuery {
    pub query_id: String,
    pub text: String,
    pub target: usize,
    pub ground_truth: PointSet,
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub scene: SceneSequence<f64>,
    pub annotations: Vec<AffordanceAnnotation>,
    pub queries: Vec<SyntheticQuery>,
    pub scenario: Scenario,
    /// Instance id of every cloud point.
    pub point_owner: Vec<usize>,
}

/// Nearest ray hit `(box index, t)` with `t > 0`; a ray starting inside a box
/// hits that box's exit face.
pub fn raycast(boxes: &[Aabb<f64>], origin: Vec3<f64>, dir: Vec3<f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, b) in boxes.iter().enumerate() {
        if let Some(t) = ray_box(b, origin, dir) {
            if best.map_or(true, |(_, bt)| t < bt) {
                best = Some((i, t));
            }
        }
    }
    best
}

fn ray_box(b: &Aabb<f64>, o: Vec3<f64>, d: Vec3<f64>) -> Option<f64> {
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for a in 0..3 {
        if d[a] == 0.0 {
            if o[a] < b.min[a] || o[a] > b.max[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[a];
        let (mut lo, mut hi) = ((b.min[a] - o[a]) * inv, (b.max[a] - o[a]) * inv);
        if lo > hi {
            std::mem::swap(&mut lo, &mut hi);
        }
        t0 = t0.max(lo);
        t1 = t1.min(hi);
    }
    if t1 < t0 || t1 <= 0.0 {
        return None;
    }
    Some(if t0 > 0.0 { t0 } else { t1 })
}

/// Camera-frame ray direction through pixel centre `(x, y)`, scaled so its z is 1.
pub fn pixel_ray(x: u32, y: u32, intrinsics: &CameraIntrinsics<f64>) -> Vec3<f64> {
    Vec3::new(
        (x as f64 - intrinsics.cx) / intrinsics.fx,
        (y as f64 - intrinsics.cy) / intrinsics.fy,
        1.0,
    )
}

/// Per-pixel `(instance id, depth)` for a camera; depth is camera z.
pub fn render_ids(
    boxes: &[Aabb<f64>],
    pose: &Pose<f64>,
    intrinsics: &CameraIntrinsics<f64>,
) -> Vec<Option<(usize, f64)>> {
    let (w, h) = (intrinsics.width, intrinsics.height);
    let mut out = Vec::with_capacity((w * h) as usize);
    for y in 0..h {
        for x in 0..w {
            let d = pose.rotation.mul_vec(pixel_ray(x, y, intrinsics));
            out.push(raycast(boxes, pose.translation, d));
        }
    }
    out
}

fn label_color(label: &str) -> [u8; 3] {
    match label {
        "wall" => [200, 196, 188],
        "cabinet" => [150, 110, 70],
        "drawer" => [176, 132, 88],
        "handle" => [60, 60, 66],
        "lamp" => [230, 210, 120],
        _ => [90, 120, 160],
    }
}

fn shade(color: [u8; 3], normal_axis: usize) -> [u8; 3] {
    let f = [0.85, 0.7, 1.0][normal_axis];
    color.map(|c| (c as f64 * f).round() as u8)
}

/// Axis of the face of `b` nearest to `p`.
fn face_axis(b: &Aabb<f64>, p: Vec3<f64>) -> usize {
    (0..3)
        .map(|a| (a, (p[a] - b.min[a]).abs().min((p[a] - b.max[a]).abs())))
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .map(|(a, _)| a)
        .unwrap_or(2)
}

struct Solid {
    label: &'static str,
    parent: Option<usize>,
    aabb: Aabb<f64>,
    spacing: f64,
    /// Sample only the −y face (the backdrop).
    front_only: bool,
}

fn solids(spec: &SyntheticSceneSpec) -> Vec<Solid> {
    let c = &spec.cabinet;
    let s = spec.point_spacing;
    let mut out = Vec::new();
    if spec.backdrop {
        let cab = cabinet_box(c);
        let y = cab.max.y + 0.05;
        out.push(Solid {
            label: "wall",
            parent: None,
            aabb: Aabb::new(
                Vec3::new(cab.min.x - 1.2, y, cab.min.z - 0.3),
                Vec3::new(cab.max.x + 1.2, y + 0.05, cab.max.z + 0.9),
            ),
            spacing: spec.backdrop_spacing,
            front_only: true,
        });
    }
    let cabinet = out.len();
    out.push(Solid {
        label: "cabinet",
        parent: None,
        aabb: cabinet_box(c),
        spacing: s,
        front_only: false,
    });
    let drawers: Vec<usize> = drawer_boxes(c)
        .into_iter()
        .map(|aabb| {
            out.push(Solid {
                label: "drawer",
                parent: Some(cabinet),
                aabb,
                spacing: s,
                front_only: false,
            });
            out.len() - 1
        })
        .collect();
    for (i, aabb) in handle_boxes(c).into_iter().enumerate() {
        out.push(Solid {
            label: "handle",
            parent: Some(drawers[i]),
            aabb,
            spacing: s,
            front_only: false,
        });
    }
    if let Some(aabb) = spec.lamp {
        out.push(Solid {
            label: "lamp",
            parent: None,
            aabb,
            spacing: s,
            front_only: false,
        });
    }
    if let Some(aabb) = spec.occluder {
        out.push(Solid {
            label: "occluder",
            parent: None,
            aabb,
            spacing: s,
            front_only: false,
        });
    }
    out
}

/// Jittered cell-centre samples on the faces of one box.
fn sample_faces(solid: &Solid, rng: &mut ChaCha8Rng) -> Vec<Vec3<f64>> {
    let b = solid.aabb;
    let mut pts = Vec::new();
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        let sides: &[f64] = if solid.front_only {
            if axis != 1 {
                continue;
            }
            &[0.0]
        } else {
            &[0.0, 1.0]
        };
        let nu = ((b.max[u] - b.min[u]) / solid.spacing).round().max(1.0) as usize;
        let nv = ((b.max[v] - b.min[v]) / solid.spacing).round().max(1.0) as usize;
        let (su, sv) = (
            (b.max[u] - b.min[u]) / nu as f64,
            (b.max[v] - b.min[v]) / nv as f64,
        );
        for &side in sides {
            let fixed = if side == 0.0 { b.min[axis] } else { b.max[axis] };
            for i in 0..nu {
                for j in 0..nv {
                    let ju = rng.gen_range(-0.1..0.1) * su;
                    let jv = rng.gen_range(-0.1..0.1) * sv;
                    let mut p = [0.0; 3];
                    p[axis] = fixed;
                    p[u] = b.min[u] + (i as f64 + 0.5) * su + ju;
                    p[v] = b.min[v] + (j as f64 + 0.5) * sv + jv;
                    pts.push(Vec3::from(p));
                }
            }
        }
    }
    pts
}

fn quantize(v: f64) -> f64 {
    v as f32 as f64
}

fn camera_poses(spec: &SyntheticSceneSpec) -> Result<Vec<Pose<f64>>> {
    let c = cabinet_box(&spec.cabinet);
    let target = Vec3::new(c.center().x, c.min.y, c.center().z);
    let o = &spec.orbit;
    (0..o.frame_count)
        .map(|i| {
            let frac = if o.frame_count == 1 {
                0.5
            } else {
                i as f64 / (o.frame_count - 1) as f64
            };
            let theta = (frac - 0.5) * o.arc_degrees.to_radians();
            let eye = Vec3::new(
                target.x + o.radius * theta.sin(),
                target.y - o.radius * theta.cos(),
                o.heights[i % o.heights.len()],
            );
            Pose::look_at(eye, target, Vec3::new(0.0, 0.0, 1.0))
        })
        .collect()
}

/// Builds the scene, its annotations and queries; deterministic for a given `SyntheticSceneSpec`.
pub fn generate_synthetic_scene(spec: &SyntheticSceneSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let solids = solids(spec);
    let boxes: Vec<Aabb<f64>> = solids.iter().map(|s| s.aabb).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut points = Vec::new();
    let mut colors = Vec::new();
    let mut owner = Vec::new();
    for (id, solid) in solids.iter().enumerate() {
        for p in sample_faces(solid, &mut rng) {
            let buried = boxes
                .iter()
                .enumerate()
                .any(|(j, b)| j != id && b.contains_with_tolerance(p, BURY_TOLERANCE));
            if buried {
                continue;
            }
            points.push(Vec3::new(quantize(p.x), quantize(p.y), quantize(p.z)));
            colors.push(label_color(solid.label));
            owner.push(id);
        }
    }
    let cloud = PointCloud::new(points, Some(colors))?;

    let (w, h) = (spec.image_width, spec.image_height);
    let f = spec.focal_scale * w as f64;
    let intrinsics = CameraIntrinsics::new(
        f,
        f,
        (w as f64 - 1.0) / 2.0,
        (h as f64 - 1.0) / 2.0,
        w,
        h,
    )?;
    let poses = camera_poses(spec)?;
    let frames: Vec<Frame<f64>> = poses
        .par_iter()
        .enumerate()
        .map(|(i, pose)| {
            let hits = render_ids(&boxes, pose, &intrinsics);
            let mut depth = vec![0.0; hits.len()];
            let mut rgb = RgbImage::new(w, h);
            for (k, hit) in hits.iter().enumerate() {
                if let Some((id, t)) = *hit {
                    depth[k] = quantize(t);
                    let (x, y) = (k as u32 % w, k as u32 / w);
                    let dir = pose.rotation.mul_vec(pixel_ray(x, y, &intrinsics));
                    let p = pose.translation + dir * t;
                    let axis = face_axis(&boxes[id], p);
                    rgb.put_pixel(x, y, Rgb(shade(label_color(solids[id].label), axis)));
                }
            }
            Frame::new(i as u32, rgb, DepthMap::new(w, h, depth)?, intrinsics, *pose)
        })
        .collect::<Result<_>>()?;
    let scene = SceneSequence::new(spec.scene_id.clone(), frames, cloud, Vec3::new(0.0, 0.0, 1.0))?;

    let members = |id: usize| -> PointSet {
        owner
            .iter()
            .enumerate()
            .filter(|&(_, &o)| o == id)
            .map(|(i, _)| i)
            .collect()
    };
    let handles: Vec<usize> = (0..solids.len()).filter(|&i| solids[i].label == "handle").collect();
    let handle_points: PointSet = handles.iter().flat_map(|&h| members(h).as_slice().to_vec()).collect();
    let annotations = vec![AffordanceAnnotation {
        category: "handle".into(),
        point_indices: handle_points,
        scene_id: spec.scene_id.clone(),
    }];

    let centroid = |set: &PointSet| scene.cloud.centroid_of(set).expect("non-empty instance");
    let mut queries = Vec::new();
    let n = handles.len();
    let mut push = |text: String, target: usize| {
        queries.push(SyntheticQuery {
            query_id: format!("{}-q{}", spec.scene_id, queries.len() + 1),
            text,
            target,
            ground_truth: members(target),
        });
    };
    // Handles are generated top to bottom.
    push("the handle of the first drawer from the top".into(), handles[0]);
    if n >= 2 {
        push("the handle of the second drawer from the top".into(), handles[1]);
    }
    push("the handle of the first drawer from the bottom".into(), handles[n - 1]);
    if let Some(lamp) = solids.iter().position(|s| s.label == "lamp") {
        let lamp_c = centroid(&members(lamp));
        let nearest = handles
            .iter()
            .copied()
            .min_by(|&a, &b| {
                lamp_c
                    .distance(centroid(&members(a)))
                    .total_cmp(&lamp_c.distance(centroid(&members(b))))
            })
            .expect("at least one handle");
        push("the handle of the drawer nearest to the lamp".into(), nearest);
    }

    let scenario = Scenario {
        scene_id: spec.scene_id.clone(),
        instances: solids
            .iter()
            .enumerate()
            .map(|(id, s)| ScenarioInstance {
                id,
                label: s.label.to_string(),
                parent: s.parent,
                aabb: s.aabb,
            })
            .collect(),
        queries: queries
            .iter()
            .map(|q| ScenarioQuery {
                query_id: q.query_id.clone(),
                text: q.text.clone(),
                target: q.target,
                target_centroid: centroid(&q.ground_truth),
            })
            .collect(),
    };
    Ok(SyntheticScene {
        scene,
        annotations,
        queries,
        scenario,
        point_owner: owner,
    })
}

/// Writes the scene directory plus annotation, query, ground-truth and scenario files.
pub fn write_synthetic_scene(s: &SyntheticScene, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_scene(&s.scene, &dir.join(SCENE_DIR), DepthUnit::Meters)?;
    write_annotations(&s.annotations, &dir.join(ANNOTATIONS_FILE))?;
    let queries: Vec<QueryEntry> = s
        .queries
        .iter()
        .map(|q| QueryEntry {
            query_id: q.query_id.clone(),
            text: q.text.clone(),
        })
        .collect();
    persist_artifact(&queries, &dir.join(QUERIES_FILE))?;
    let gt: BTreeMap<&str, &PointSet> = s
        .queries
        .iter()
        .map(|q| (q.query_id.as_str(), &q.ground_truth))
        .collect();
    persist_artifact(&gt, &dir.join(GT_FILE))?;
    persist_artifact(&s.scenario, &dir.join(SCENARIO_FILE))
}

//! On-disk scene layout: `manifest.json`, per-frame RGB/depth files, binary PLY cloud,
//! and JSON affordance annotations.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose};
use crate::linalg::Vec3;
use crate::pointset::PointSet;
use crate::raster::DepthMap;
use crate::scalar::Real;
use crate::scene::{normalize_label, AffordanceAnnotation, Frame, PointCloud, SceneSequence};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DepthUnit {
    /// 16-bit PNG holding millimetres.
    #[serde(rename = "mm")]
    Millimeters,
    /// Raw little-endian `f32` metres, row-major.
    #[serde(rename = "m")]
    Meters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub index: u32,
    pub rgb: String,
    pub depth: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Row-major 4×4 camera-to-world transform.
    pub pose: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub scene_id: String,
    pub depth_unit: DepthUnit,
    #[serde(default = "default_cloud")]
    pub cloud: String,
    #[serde(default = "default_up")]
    pub up_axis: [f64; 3],
    pub frames: Vec<FrameEntry>,
}

fn default_cloud() -> String {
    "cloud.ply".into()
}

fn default_up() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

pub fn read_manifest(root: &Path) -> Result<SceneManifest> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::ingestion(&path, format!("cannot read manifest: {e}")))?;
    serde_json::from_str(&text).map_err(|e| Error::ingestion(&path, format!("bad manifest: {e}")))
}

/// Loads and validates a posed RGB-D scene directory.
pub fn load_scene<T: Real>(root: &Path) -> Result<SceneSequence<T>> {
    let manifest = read_manifest(root)?;
    let mut entries = manifest.frames.clone();
    entries.sort_by_key(|e| e.index);

    let mut frames = Vec::with_capacity(entries.len());
    for entry in &entries {
        frames.push(load_frame(root, entry, manifest.depth_unit)?);
    }
    let cloud = read_ply::<T>(&root.join(&manifest.cloud))?;
    let up = Vec3::<f64>::from(manifest.up_axis).cast::<T>();
    SceneSequence::new(manifest.scene_id, frames, cloud, up)
}

fn load_frame<T: Real>(root: &Path, entry: &FrameEntry, unit: DepthUnit) -> Result<Frame<T>> {
    let rgb_path = root.join(&entry.rgb);
    let rgb = image::open(&rgb_path)
        .map_err(|e| Error::ingestion(&rgb_path, format!("cannot read rgb: {e}")))?
        .into_rgb8();
    let depth_path = root.join(&entry.depth);
    let depth = match unit {
        DepthUnit::Millimeters => read_depth_png(&depth_path)?,
        DepthUnit::Meters => read_depth_f32(&depth_path, entry.width, entry.height)
            .map_err(|e| match e {
                Error::Validation(m) => Error::Validation(format!("frame {}: {m}", entry.index)),
                other => other,
            })?,
    };
    let intrinsics = CameraIntrinsics::new(
        T::lit(entry.fx),
        T::lit(entry.fy),
        T::lit(entry.cx),
        T::lit(entry.cy),
        entry.width,
        entry.height,
    )
    .map_err(|e| Error::Validation(format!("frame {}: {e}", entry.index)))?;
    let m: [f64; 16] = entry.pose.as_slice().try_into().map_err(|_| {
        Error::Validation(format!(
            "frame {}: pose has {} values, expected 16",
            entry.index,
            entry.pose.len()
        ))
    })?;
    let pose = Pose::from_row_major(&m.map(T::lit))
        .map_err(|e| Error::Validation(format!("frame {}: {e}", entry.index)))?;
    Frame::new(entry.index, rgb, depth, intrinsics, pose)
}

fn read_depth_png<T: Real>(path: &Path) -> Result<DepthMap<T>> {
    let img = image::open(path)
        .map_err(|e| Error::ingestion(path, format!("cannot read depth: {e}")))?
        .into_luma16();
    let data = img.pixels().map(|p| T::lit(p.0[0] as f64 / 1000.0)).collect();
    DepthMap::new(img.width(), img.height(), data)
}

fn read_depth_f32<T: Real>(path: &Path, width: u32, height: u32) -> Result<DepthMap<T>> {
    let bytes =
        fs::read(path).map_err(|e| Error::ingestion(path, format!("cannot read depth: {e}")))?;
    let expected = width as usize * height as usize * 4;
    if bytes.len() != expected {
        return Err(Error::Validation(format!(
            "depth file {} has {} bytes, expected {expected} for {width}x{height}",
            path.display(),
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    DepthMap::new(width, height, data)
}

/// Writes a scene in the layout [`load_scene`] reads.
pub fn write_scene<T: Real>(scene: &SceneSequence<T>, root: &Path, unit: DepthUnit) -> Result<()> {
    for sub in ["rgb", "depth"] {
        fs::create_dir_all(root.join(sub)).map_err(|e| Error::io(root.join(sub), e))?;
    }
    let mut entries = Vec::with_capacity(scene.frames.len());
    for frame in &scene.frames {
        let rgb = format!("rgb/{:06}.png", frame.index);
        let depth = match unit {
            DepthUnit::Millimeters => format!("depth/{:06}.png", frame.index),
            DepthUnit::Meters => format!("depth/{:06}.bin", frame.index),
        };
        frame
            .rgb
            .save(root.join(&rgb))
            .map_err(|e| Error::ingestion(root.join(&rgb), e.to_string()))?;
        match unit {
            DepthUnit::Millimeters => write_depth_png(&frame.depth, &root.join(&depth))?,
            DepthUnit::Meters => write_depth_f32(&frame.depth, &root.join(&depth))?,
        }
        let i = &frame.intrinsics;
        entries.push(FrameEntry {
            index: frame.index,
            rgb,
            depth,
            fx: i.fx.as_f64(),
            fy: i.fy.as_f64(),
            cx: i.cx.as_f64(),
            cy: i.cy.as_f64(),
            width: i.width,
            height: i.height,
            pose: frame.pose.to_row_major().iter().map(|v| v.as_f64()).collect(),
        });
    }
    write_ply(&scene.cloud, &root.join("cloud.ply"))?;
    let manifest = SceneManifest {
        scene_id: scene.scene_id.clone(),
        depth_unit: unit,
        cloud: "cloud.ply".into(),
        up_axis: scene.up_axis.cast::<f64>().to_array(),
        frames: entries,
    };
    let path = root.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

fn write_depth_png<T: Real>(depth: &DepthMap<T>, path: &Path) -> Result<()> {
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_fn(depth.width(), depth.height(), |x, y| {
            let d = depth.get(x, y);
            let mm = if DepthMap::is_valid(d) {
                (d.as_f64() * 1000.0).round().clamp(0.0, u16::MAX as f64) as u16
            } else {
                0
            };
            Luma([mm])
        });
    img.save(path)
        .map_err(|e| Error::ingestion(path, e.to_string()))
}

fn write_depth_f32<T: Real>(depth: &DepthMap<T>, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(depth.data().len() * 4);
    for d in depth.data() {
        bytes.extend_from_slice(&(d.as_f64() as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PlyType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl PlyType {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => PlyType::I8,
            "uchar" | "uint8" => PlyType::U8,
            "short" | "int16" => PlyType::I16,
            "ushort" | "uint16" => PlyType::U16,
            "int" | "int32" => PlyType::I32,
            "uint" | "uint32" => PlyType::U32,
            "float" | "float32" => PlyType::F32,
            "double" | "float64" => PlyType::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            PlyType::I8 | PlyType::U8 => 1,
            PlyType::I16 | PlyType::U16 => 2,
            PlyType::I32 | PlyType::U32 | PlyType::F32 => 4,
            PlyType::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            PlyType::I8 => b[0] as i8 as f64,
            PlyType::U8 => b[0] as f64,
            PlyType::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            PlyType::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            PlyType::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            PlyType::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            PlyType::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            PlyType::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

/// Reads the vertex element of a binary little-endian PLY file.
pub fn read_ply<T: Real>(path: &Path) -> Result<PointCloud<T>> {
    let file = fs::File::open(path).map_err(|e| Error::ingestion(path, format!("cannot open cloud: {e}")))?;
    let mut reader = BufReader::new(file);
    let bad = |msg: &str| Error::ingestion(path, msg.to_string());

    let mut line = String::new();
    let read_line = |reader: &mut BufReader<fs::File>, line: &mut String| -> Result<()> {
        line.clear();
        let n = reader
            .read_line(line)
            .map_err(|e| Error::ingestion(path, e.to_string()))?;
        if n == 0 {
            return Err(Error::ingestion(path, "truncated PLY header"));
        }
        Ok(())
    };

    read_line(&mut reader, &mut line)?;
    if line.trim_end() != "ply" {
        return Err(bad("missing 'ply' magic"));
    }
    let mut vertex_count = None;
    let mut in_vertex = false;
    let mut seen_vertex = false;
    let mut props: Vec<(String, PlyType)> = Vec::new();
    loop {
        read_line(&mut reader, &mut line)?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["format", fmt, _] => {
                if *fmt != "binary_little_endian" {
                    return Err(bad(&format!("unsupported PLY format {fmt}")));
                }
            }
            ["element", name, count] => {
                if seen_vertex {
                    in_vertex = false;
                    continue;
                }
                in_vertex = *name == "vertex";
                if in_vertex {
                    seen_vertex = true;
                    vertex_count = Some(count.parse::<usize>().map_err(|_| bad("bad vertex count"))?);
                } else {
                    return Err(bad("vertex element must come first"));
                }
            }
            ["property", "list", ..] if in_vertex => {
                return Err(bad("list properties on vertices are unsupported"))
            }
            ["property", ty, name] if in_vertex => {
                let ty = PlyType::parse(ty).ok_or_else(|| bad(&format!("unknown type {ty}")))?;
                props.push((name.to_string(), ty));
            }
            _ => {}
        }
    }
    let count = vertex_count.ok_or_else(|| bad("no vertex element"))?;
    let find = |names: &[&str]| props.iter().position(|(n, _)| names.contains(&n.as_str()));
    let (xi, yi, zi) = match (find(&["x"]), find(&["y"]), find(&["z"])) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(bad("vertex element lacks x/y/z")),
    };
    let color = match (find(&["red", "r"]), find(&["green", "g"]), find(&["blue", "b"])) {
        (Some(r), Some(g), Some(b)) => Some((r, g, b)),
        _ => None,
    };
    let offsets: Vec<usize> = props
        .iter()
        .scan(0, |acc, (_, t)| {
            let o = *acc;
            *acc += t.size();
            Some(o)
        })
        .collect();
    let stride: usize = props.iter().map(|(_, t)| t.size()).sum();
    let mut body = vec![0u8; stride * count];
    reader
        .read_exact(&mut body)
        .map_err(|_| bad("truncated PLY body"))?;

    let value = |rec: &[u8], k: usize| props[k].1.read(&rec[offsets[k]..]);
    let mut points = Vec::with_capacity(count);
    let mut colors = color.map(|_| Vec::with_capacity(count));
    for rec in body.chunks_exact(stride) {
        points.push(Vec3::new(
            T::lit(value(rec, xi)),
            T::lit(value(rec, yi)),
            T::lit(value(rec, zi)),
        ));
        if let (Some((r, g, b)), Some(cs)) = (color, colors.as_mut()) {
            cs.push([value(rec, r) as u8, value(rec, g) as u8, value(rec, b) as u8]);
        }
    }
    PointCloud::new(points, colors).map_err(|e| bad(&e.to_string()))
}

/// Writes `x,y,z` as float32 plus optional `red,green,blue` uchar.
pub fn write_ply<T: Real>(cloud: &PointCloud<T>, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(64 + cloud.len() * 15);
    write!(
        out,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n",
        cloud.len()
    )
    .unwrap();
    if cloud.colors.is_some() {
        out.extend_from_slice(b"property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    out.extend_from_slice(b"end_header\n");
    for (i, p) in cloud.points.iter().enumerate() {
        for c in [p.x, p.y, p.z] {
            out.extend_from_slice(&(c.as_f64() as f32).to_le_bytes());
        }
        if let Some(colors) = &cloud.colors {
            out.extend_from_slice(&colors[i]);
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a `category → [point index]` JSON map.
///
/// Categories are trimmed and lowercased; duplicates after normalization are
/// merged. When `cloud_len` is given every index must be below it.
pub fn load_annotations(
    path: &Path,
    scene_id: &str,
    cloud_len: Option<usize>,
) -> Result<Vec<AffordanceAnnotation>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::ingestion(path, format!("cannot read annotations: {e}")))?;
    let raw: BTreeMap<String, Vec<usize>> = serde_json::from_str(&text)
        .map_err(|e| Error::ingestion(path, format!("bad annotations: {e}")))?;
    annotations_from_map(raw, scene_id, cloud_len)
}

pub fn annotations_from_map(
    raw: BTreeMap<String, Vec<usize>>,
    scene_id: &str,
    cloud_len: Option<usize>,
) -> Result<Vec<AffordanceAnnotation>> {
    let mut merged: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (category, indices) in raw {
        let category = normalize_label(&category);
        if category.is_empty() {
            return Err(Error::Validation("empty annotation category".into()));
        }
        if let Some(n) = cloud_len {
            if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
                return Err(Error::Validation(format!(
                    "annotation '{category}' index {bad} out of range for {n}-point cloud"
                )));
            }
        }
        merged.entry(category).or_default().extend(indices);
    }
    Ok(merged
        .into_iter()
        .map(|(category, idx)| AffordanceAnnotation {
            category,
            point_indices: PointSet::from(idx),
            scene_id: scene_id.to_string(),
        })
        .collect())
}

pub fn write_annotations(annotations: &[AffordanceAnnotation], path: &Path) -> Result<()> {
    let map: BTreeMap<&str, &[usize]> = annotations
        .iter()
        .map(|a| (a.category.as_str(), a.point_indices.as_slice()))
        .collect();
    let text = serde_json::to_string(&map).expect("annotations serialize");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Resolves `path` relative to a scene root.
pub fn scene_path(root: &Path, rel: &str) -> PathBuf {
    root.join(rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_scene() -> SceneSequence<f64> {
        let intr = CameraIntrinsics::new(10.0, 10.0, 2.0, 1.5, 4, 3).unwrap();
        let mut depth = DepthMap::filled(4, 3, 2.0);
        depth.set(0, 0, 0.0);
        let frames = (0..2)
            .map(|i| {
                Frame::new(
                    i * 5,
                    image::RgbImage::from_pixel(4, 3, image::Rgb([i as u8, 2, 3])),
                    depth.clone(),
                    intr,
                    Pose::identity(),
                )
                .unwrap()
            })
            .collect();
        let cloud = PointCloud::new(
            vec![Vec3::lit(0.0, 0.0, 2.0), Vec3::lit(0.25, -0.5, 1.5)],
            Some(vec![[1, 2, 3], [4, 5, 6]]),
        )
        .unwrap();
        SceneSequence::new("tiny", frames, cloud, Vec3::lit(0.0, 0.0, 1.0)).unwrap()
    }

    #[test]
    fn scene_roundtrips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let scene = tiny_scene();
        write_scene(&scene, dir.path(), DepthUnit::Meters).unwrap();
        let back: SceneSequence<f64> = load_scene(dir.path()).unwrap();
        assert_eq!(back.frames.len(), 2);
        assert_eq!(back.frames[1].index, 5);
        assert_eq!(back.cloud, scene.cloud);
        assert_eq!(back.frames[0].depth, scene.frames[0].depth);
        assert_eq!(back.frames[1].rgb, scene.frames[1].rgb);
    }

    #[test]
    fn millimetre_depth_is_converted_to_metres() {
        let dir = tempfile::tempdir().unwrap();
        let mut scene = tiny_scene();
        scene.frames[0].depth = DepthMap::filled(4, 3, 2.0);
        write_scene(&scene, dir.path(), DepthUnit::Millimeters).unwrap();
        let raw = image::open(dir.path().join("depth/000000.png")).unwrap().into_luma16();
        assert_eq!(raw.get_pixel(1, 1).0[0], 2000);
        let back: SceneSequence<f64> = load_scene(dir.path()).unwrap();
        assert_eq!(back.frames[0].depth.get(1, 1), 2.0);
    }

    #[test]
    fn missing_manifest_is_an_ingestion_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_scene::<f64>(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Ingestion { .. }), "{err}");
    }

    #[test]
    fn missing_depth_file_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        write_scene(&tiny_scene(), dir.path(), DepthUnit::Meters).unwrap();
        fs::remove_file(dir.path().join("depth/000005.bin")).unwrap();
        let err = load_scene::<f64>(dir.path()).unwrap_err();
        match err {
            Error::Ingestion { path, .. } => assert!(path.ends_with("depth/000005.bin")),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn dimension_mismatch_names_the_frame() {
        let dir = tempfile::tempdir().unwrap();
        write_scene(&tiny_scene(), dir.path(), DepthUnit::Meters).unwrap();
        let mut m = read_manifest(dir.path()).unwrap();
        m.frames[1].width = 5;
        m.frames[1].cx = 2.5;
        fs::write(dir.path().join(MANIFEST_FILE), serde_json::to_string(&m).unwrap()).unwrap();
        let err = load_scene::<f64>(dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Validation(_)));
        assert!(msg.contains("frame 5"), "{msg}");
    }

    #[test]
    fn skewed_pose_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_scene(&tiny_scene(), dir.path(), DepthUnit::Meters).unwrap();
        let mut m = read_manifest(dir.path()).unwrap();
        m.frames[0].pose[1] = 0.01;
        fs::write(dir.path().join(MANIFEST_FILE), serde_json::to_string(&m).unwrap()).unwrap();
        assert!(matches!(load_scene::<f64>(dir.path()), Err(Error::Validation(_))));
    }

    #[test]
    fn annotations_are_normalized_and_validated() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.json");
        fs::write(&p, r#"{"handle": [0, 1, 2]}"#).unwrap();
        let a = load_annotations(&p, "s", None).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].category, "handle");
        assert_eq!(a[0].point_indices.len(), 3);

        fs::write(&p, r#"{"Handle": [5]}"#).unwrap();
        assert_eq!(load_annotations(&p, "s", None).unwrap()[0].category, "handle");

        fs::write(&p, r#"{"handle": [10]}"#).unwrap();
        assert!(matches!(load_annotations(&p, "s", Some(5)), Err(Error::Validation(_))));

        fs::write(&p, r#"{"  ": [1]}"#).unwrap();
        assert!(matches!(load_annotations(&p, "s", None), Err(Error::Validation(_))));
    }

    #[test]
    fn ply_with_extra_properties_and_faces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ply");
        let mut bytes = b"ply\nformat binary_little_endian 1.0\ncomment x\nelement vertex 1\nproperty double x\nproperty double y\nproperty double z\nproperty short intensity\nelement face 0\nproperty list uchar int vertex_indices\nend_header\n".to_vec();
        for v in [1.5f64, -2.0, 3.25] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&7i16.to_le_bytes());
        fs::write(&p, bytes).unwrap();
        let c: PointCloud<f32> = read_ply(&p).unwrap();
        assert_eq!(c.points, vec![Vec3::lit(1.5, -2.0, 3.25)]);
        assert!(c.colors.is_none());
    }
}

//! Schematic top-down map: cloud points in gray, node footprints as boxes,
//! node ids as labels that never sit on top of each other.

use std::fmt::Write;

use image::{Rgb, RgbImage};

use super::{map_axes, NodeKind, SceneGraph};
use crate::linalg::Vec3;
use crate::scalar::Real;
use crate::scene::PointCloud;

pub const CANVAS: u32 = 1024;
const MARGIN: f64 = 48.0;
const MAX_POINTS: usize = 4000;
const CTX_STROKE: [u8; 3] = [31, 119, 180];
const INT_STROKE: [u8; 3] = [214, 39, 40];
const POINT_FILL: [u8; 3] = [160, 160, 160];
const LABEL_HEIGHT: f64 = 16.0;
const RASTER_STROKE: i64 = 4;

struct Rect {
    id: usize,
    kind: NodeKind,
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

impl Rect {
    fn overlaps(&self, o: &Rect) -> bool {
        self.x0 <= o.x1 && o.x0 <= self.x1 && self.y0 <= o.y1 && o.y0 <= self.y1
    }

    fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }
}

struct Label {
    text: String,
    x: f64,
    y: f64,
    /// Leader line from the rectangle centre, for labels moved outside.
    leader: Option<(f64, f64)>,
}

impl Label {
    fn extent(&self) -> (f64, f64, f64, f64) {
        let w = label_width(&self.text);
        (
            self.x - w / 2.0,
            self.y - LABEL_HEIGHT / 2.0,
            self.x + w / 2.0,
            self.y + LABEL_HEIGHT / 2.0,
        )
    }
}

fn label_width(text: &str) -> f64 {
    9.0 * text.len() as f64 + 4.0
}

struct Layout {
    points: Vec<(f64, f64)>,
    rects: Vec<Rect>,
    labels: Vec<Label>,
}

fn boxes_touch(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64)) -> bool {
    a.0 < b.2 && b.0 < a.2 && a.1 < b.3 && b.1 < a.3
}

fn layout<T: Real>(graph: &SceneGraph<T>, cloud: &PointCloud<T>) -> Layout {
    let (right, back, _) = map_axes(graph.up_axis.cast::<f64>());
    let to_map = |p: Vec3<f64>| (p.dot(right), p.dot(back));

    let stride = cloud.len().div_ceil(MAX_POINTS).max(1);
    let sampled: Vec<(f64, f64)> = cloud
        .points
        .iter()
        .step_by(stride)
        .map(|p| to_map(p.cast()))
        .collect();
    let footprints: Vec<(f64, f64, f64, f64)> = graph
        .nodes
        .iter()
        .map(|n| {
            let corners = n.aabb.corners().map(|p| to_map(p.cast()));
            corners.iter().fold(
                (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
                |(a0, b0, a1, b1), &(a, b)| (a0.min(a), b0.min(b), a1.max(a), b1.max(b)),
            )
        })
        .collect();

    let mut lo = (f64::INFINITY, f64::INFINITY);
    let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &(a, b) in &sampled {
        lo = (lo.0.min(a), lo.1.min(b));
        hi = (hi.0.max(a), hi.1.max(b));
    }
    for f in &footprints {
        lo = (lo.0.min(f.0), lo.1.min(f.1));
        hi = (hi.0.max(f.2), hi.1.max(f.3));
    }
    if !lo.0.is_finite() {
        lo = (-1.0, -1.0);
        hi = (1.0, 1.0);
    }
    let span = (hi.0 - lo.0).max(hi.1 - lo.1).max(1e-6);
    let scale = (CANVAS as f64 - 2.0 * MARGIN) / span;
    let mid = ((lo.0 + hi.0) / 2.0, (lo.1 + hi.1) / 2.0);
    let c = CANVAS as f64 / 2.0;
    // Screen y grows downward; the back axis points up the page.
    let screen = |a: f64, b: f64| (c + (a - mid.0) * scale, c - (b - mid.1) * scale);

    let points = sampled.into_iter().map(|(a, b)| screen(a, b)).collect();
    let rects: Vec<Rect> = graph
        .nodes
        .iter()
        .zip(&footprints)
        .map(|(n, f)| {
            let (x0, y1) = screen(f.0, f.1);
            let (x1, y0) = screen(f.2, f.3);
            Rect {
                id: n.node_id,
                kind: n.kind,
                x0,
                y0,
                x1,
                y1,
            }
        })
        .collect();

    let mut labels: Vec<Label> = Vec::with_capacity(rects.len());
    for (i, r) in rects.iter().enumerate() {
        let text = r.id.to_string();
        let (cx, cy) = r.center();
        let overlapped = rects.iter().enumerate().any(|(j, o)| j != i && r.overlaps(o));
        let taken = |l: &Label| {
            labels.iter().any(|p| boxes_touch(p.extent(), l.extent()))
                || (overlapped && rects.iter().any(|o| boxes_touch(rect_box(o), l.extent())))
        };
        let centred = Label {
            text: text.clone(),
            x: cx,
            y: cy,
            leader: None,
        };
        if !overlapped && !taken(&centred) {
            labels.push(centred);
            continue;
        }
        let placed = outside_positions(r, &text)
            .map(|(x, y)| Label {
                text: text.clone(),
                x,
                y,
                leader: Some((cx, cy)),
            })
            .find(|l| !taken(l))
            .unwrap_or_else(|| Label {
                text: text.clone(),
                x: r.x1 + label_width(&text),
                y: cy,
                leader: Some((cx, cy)),
            });
        labels.push(placed);
    }
    Layout {
        points,
        rects,
        labels,
    }
}

fn rect_box(r: &Rect) -> (f64, f64, f64, f64) {
    (r.x0, r.y0, r.x1, r.y1)
}

/// Label centres around a rectangle on growing rings: E, NE, N, NW, W, SW, S, SE.
fn outside_positions<'a>(r: &'a Rect, text: &str) -> impl Iterator<Item = (f64, f64)> + 'a {
    let hw = label_width(text) / 2.0 + 4.0;
    let hh = LABEL_HEIGHT / 2.0 + 4.0;
    (1..=40).flat_map(move |ring| {
        let d = 18.0 * ring as f64;
        let (cx, cy) = r.center();
        [
            (r.x1 + hw + d - 18.0, cy),
            (r.x1 + hw + d - 18.0, r.y0 - hh - d + 18.0),
            (cx, r.y0 - hh - d + 18.0),
            (r.x0 - hw - d + 18.0, r.y0 - hh - d + 18.0),
            (r.x0 - hw - d + 18.0, cy),
            (r.x0 - hw - d + 18.0, r.y1 + hh + d - 18.0),
            (cx, r.y1 + hh + d - 18.0),
            (r.x1 + hw + d - 18.0, r.y1 + hh + d - 18.0),
        ]
    })
}

fn hex(c: [u8; 3]) -> String {
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// SVG document of the top-down map; byte-identical for identical inputs.
pub fn render_topdown<T: Real>(graph: &SceneGraph<T>, cloud: &PointCloud<T>) -> String {
    let l = layout(graph, cloud);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{CANVAS}\" height=\"{CANVAS}\" viewBox=\"0 0 {CANVAS} {CANVAS}\">"
    );
    let _ = writeln!(s, "<rect width=\"{CANVAS}\" height=\"{CANVAS}\" fill=\"#ffffff\"/>");
    let _ = writeln!(s, "<g fill=\"{}\">", hex(POINT_FILL));
    for (x, y) in &l.points {
        let _ = writeln!(s, "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"1.50\"/>");
    }
    s.push_str("</g>\n<g fill=\"none\" stroke-width=\"2\">\n");
    for r in &l.rects {
        let stroke = if r.kind == NodeKind::Ctx { CTX_STROKE } else { INT_STROKE };
        let _ = writeln!(
            s,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" stroke=\"{}\" data-node=\"{}\"/>",
            r.x0,
            r.y0,
            r.x1 - r.x0,
            r.y1 - r.y0,
            hex(stroke),
            r.id
        );
    }
    s.push_str("</g>\n<g font-family=\"monospace\" font-size=\"14\" text-anchor=\"middle\" dominant-baseline=\"central\">\n");
    for (label, r) in l.labels.iter().zip(&l.rects) {
        let stroke = if r.kind == NodeKind::Ctx { CTX_STROKE } else { INT_STROKE };
        if let Some((lx, ly)) = label.leader {
            let _ = writeln!(
                s,
                "<line x1=\"{lx:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{}\" stroke-width=\"1\"/>",
                label.x,
                label.y,
                hex(stroke)
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" fill=\"{}\">{}</text>",
            label.x,
            label.y,
            hex(stroke),
            label.text
        );
    }
    s.push_str("</g>\n</svg>\n");
    s
}

/// 3×5 bitmap digits, one row per entry, most significant bit leftmost.
const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b010, 0b010, 0b010],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];

fn put(img: &mut RgbImage, x: i64, y: i64, c: [u8; 3]) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, Rgb(c));
    }
}

fn fill(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, c: [u8; 3]) {
    for y in y0..=y1 {
        for x in x0..=x1 {
            put(img, x, y, c);
        }
    }
}

fn line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), c: [u8; 3]) {
    let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as i64).max(1);
    for k in 0..=steps {
        let t = k as f64 / steps as f64;
        let x = (a.0 + (b.0 - a.0) * t).round() as i64;
        let y = (a.1 + (b.1 - a.1) * t).round() as i64;
        fill(img, x, y, x + 1, y + 1, c);
    }
}

fn text(img: &mut RgbImage, s: &str, cx: f64, cy: f64, c: [u8; 3]) {
    let scale = 3;
    let w = s.len() as i64 * 4 * scale - scale;
    let x0 = cx.round() as i64 - w / 2;
    let y0 = cy.round() as i64 - 5 * scale / 2;
    for (k, ch) in s.bytes().enumerate() {
        let Some(glyph) = ch.checked_sub(b'0').and_then(|d| DIGITS.get(d as usize)) else {
            continue;
        };
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..3 {
                if bits & (0b100 >> col) != 0 {
                    let x = x0 + (k as i64 * 4 + col) * scale;
                    let y = y0 + row as i64 * scale;
                    fill(img, x, y, x + scale - 1, y + scale - 1, c);
                }
            }
        }
    }
}

/// Raster version of the same layout, for backends that take images.
pub fn render_topdown_raster<T: Real>(graph: &SceneGraph<T>, cloud: &PointCloud<T>) -> RgbImage {
    let l = layout(graph, cloud);
    let mut img = RgbImage::from_pixel(CANVAS, CANVAS, Rgb([255, 255, 255]));
    for &(x, y) in &l.points {
        let (x, y) = (x.round() as i64, y.round() as i64);
        fill(&mut img, x - 1, y - 1, x, y, POINT_FILL);
    }
    let half = RASTER_STROKE / 2;
    for r in &l.rects {
        let c = if r.kind == NodeKind::Ctx { CTX_STROKE } else { INT_STROKE };
        let (x0, y0, x1, y1) = (
            r.x0.round() as i64,
            r.y0.round() as i64,
            r.x1.round() as i64,
            r.y1.round() as i64,
        );
        fill(&mut img, x0 - half, y0 - half, x1 + half - 1, y0 + half - 1, c);
        fill(&mut img, x0 - half, y1 - half, x1 + half - 1, y1 + half - 1, c);
        fill(&mut img, x0 - half, y0 - half, x0 + half - 1, y1 + half - 1, c);
        fill(&mut img, x1 - half, y0 - half, x1 + half - 1, y1 + half - 1, c);
    }
    for (label, r) in l.labels.iter().zip(&l.rects) {
        let c = if r.kind == NodeKind::Ctx { CTX_STROKE } else { INT_STROKE };
        if let Some(from) = label.leader {
            line(&mut img, from, (label.x, label.y), c);
        }
        text(&mut img, &label.text, label.x, label.y, c);
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphNode;
    use crate::linalg::Aabb;
    use crate::pointset::PointSet;

    fn node(id: usize, kind: NodeKind, min: [f64; 3], max: [f64; 3]) -> GraphNode<f64> {
        let aabb = Aabb::new(Vec3::from(min), Vec3::from(max));
        GraphNode {
            node_id: id,
            kind,
            label: "handle".into(),
            centroid: aabb.center(),
            aabb,
            parent_id: None,
            point_indices: PointSet::new(),
        }
    }

    fn graph(nodes: Vec<GraphNode<f64>>) -> SceneGraph<f64> {
        SceneGraph {
            scene_id: "r".into(),
            up_axis: Vec3::lit(0.0, 0.0, 1.0),
            nodes,
        }
    }

    fn cloud() -> PointCloud<f64> {
        PointCloud::new(vec![Vec3::lit(0.0, 0.0, 0.0)], None).unwrap()
    }

    #[test]
    fn single_box_is_centred() {
        let g = graph(vec![node(1, NodeKind::Int, [-0.1, -0.1, 0.0], [0.1, 0.1, 0.2])]);
        let l = layout(&g, &cloud());
        let (cx, cy) = l.rects[0].center();
        assert!((cx - 512.0).abs() < 1e-9 && (cy - 512.0).abs() < 1e-9);
        assert_eq!(l.labels[0].text, "1");
        assert!(l.labels[0].leader.is_none());
    }

    #[test]
    fn label_order_follows_x() {
        let g = graph(vec![
            node(1, NodeKind::Int, [-0.05, -0.05, 0.0], [0.05, 0.05, 0.1]),
            node(2, NodeKind::Int, [0.45, -0.05, 0.0], [0.55, 0.05, 0.1]),
        ]);
        let svg = render_topdown(&g, &cloud());
        let p1 = svg.find(">1</text>").unwrap();
        let p2 = svg.find(">2</text>").unwrap();
        let l = layout(&g, &cloud());
        assert!(l.labels[0].x < l.labels[1].x);
        assert!(p1 < p2);
    }

    #[test]
    fn stacked_footprints_get_separate_outside_labels() {
        let g = graph(vec![
            node(1, NodeKind::Ctx, [-0.3, -0.1, 0.0], [0.3, 0.3, 1.0]),
            node(2, NodeKind::Int, [-0.05, -0.1, 0.2], [0.05, -0.05, 0.25]),
            node(3, NodeKind::Int, [-0.05, -0.1, 0.6], [0.05, -0.05, 0.65]),
        ]);
        let l = layout(&g, &cloud());
        for i in 0..3 {
            assert!(l.labels[i].leader.is_some());
            for j in i + 1..3 {
                assert!(!boxes_touch(l.labels[i].extent(), l.labels[j].extent()));
            }
        }
    }

    #[test]
    fn raster_has_canvas_size() {
        let g = graph(vec![node(1, NodeKind::Ctx, [-0.1, -0.1, 0.0], [0.1, 0.1, 0.2])]);
        let img = render_topdown_raster(&g, &cloud());
        assert_eq!(img.dimensions(), (CANVAS, CANVAS));
        assert_eq!(img.get_pixel(0, 0).0, [255, 255, 255]);
        assert!(img.pixels().any(|p| p.0 == CTX_STROKE));
    }
}

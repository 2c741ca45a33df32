//! Depth maps, binary masks and their compact encodings.

use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Row-major H×W metric depth. Non-positive or non-finite values mean "no reading".
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap<T: Real> {
    width: u32,
    height: u32,
    data: Vec<T>,
}

impl<T: Real> DepthMap<T> {
    pub fn new(width: u32, height: u32, data: Vec<T>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::Validation(format!(
                "depth buffer has {} values, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(DepthMap {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, value: T) -> Self {
        DepthMap {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> T {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: T) {
        self.data[y as usize * self.width as usize + x as usize] = value;
    }

    #[inline]
    pub fn is_valid(depth: T) -> bool {
        depth.is_finite() && depth > T::zero()
    }
}

/// Binary H×W mask.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "Rle", try_from = "Rle")]
pub struct Mask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl std::fmt::Debug for Mask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Mask({}x{}, {} set)", self.width, self.height, self.count())
    }
}

impl Mask {
    pub fn empty(width: u32, height: u32) -> Self {
        Mask {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Mask {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    /// Like [`Mask::get`] but false outside the image.
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as u64) < self.width as u64
            && (y as u64) < self.height as u64
            && self.get(x as u32, y as u32)
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = value;
    }

    /// Sets a pixel given signed coordinates; silently clips.
    pub fn set_clipped(&mut self, x: i64, y: i64) {
        if x >= 0 && y >= 0 && (x as u64) < self.width as u64 && (y as u64) < self.height as u64 {
            self.set(x as u32, y as u32, true);
        }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width as usize;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| ((i % w) as u32, (i / w) as u32))
    }

    /// Mean pixel coordinate of the set pixels.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for (x, y) in self.pixels() {
            sx += x as f64;
            sy += y as f64;
            n += 1;
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    /// Inclusive pixel bounding box `(x_min, y_min, x_max, y_max)`.
    pub fn bounding_box(&self) -> Option<(u32, u32, u32, u32)> {
        self.pixels().fold(None, |acc, (x, y)| {
            Some(match acc {
                None => (x, y, x, y),
                Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x), d.max(y)),
            })
        })
    }

    pub fn union_with(&mut self, other: &Mask) {
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
    }

    pub fn intersection_count(&self, other: &Mask) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a && b)
            .count()
    }

    /// Square (Chebyshev) dilation by `radius` pixels.
    pub fn dilated(&self, radius: u32) -> Mask {
        let r = radius as i64;
        let mut out = Mask::empty(self.width, self.height);
        for (x, y) in self.pixels() {
            for dy in -r..=r {
                for dx in -r..=r {
                    out.set_clipped(x as i64 + dx, y as i64 + dy);
                }
            }
        }
        out
    }

    pub fn to_gray_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| {
            Luma([if self.get(x, y) { 255 } else { 0 }])
        })
    }

    pub fn from_gray_image(img: &GrayImage) -> Self {
        Mask::from_fn(img.width(), img.height(), |x, y| img.get_pixel(x, y).0[0] >= 128)
    }
}

/// Run-length encoding of a mask: alternating run lengths, starting with unset pixels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    pub width: u32,
    pub height: u32,
    pub runs: Vec<u32>,
}

impl From<Mask> for Rle {
    fn from(mask: Mask) -> Self {
        Rle::from(&mask)
    }
}

impl From<&Mask> for Rle {
    fn from(mask: &Mask) -> Self {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u32;
        for &b in &mask.bits {
            if b == current {
                len += 1;
            } else {
                runs.push(len);
                current = b;
                len = 1;
            }
        }
        runs.push(len);
        Rle {
            width: mask.width,
            height: mask.height,
            runs,
        }
    }
}

impl TryFrom<Rle> for Mask {
    type Error = Error;

    fn try_from(rle: Rle) -> Result<Self> {
        let total = rle.width as usize * rle.height as usize;
        let mut bits = Vec::with_capacity(total);
        let mut value = false;
        for &run in &rle.runs {
            bits.extend(std::iter::repeat(value).take(run as usize));
            value = !value;
        }
        if bits.len() != total {
            return Err(Error::parse(
                format!("mask runs cover {} pixels, expected {total}", bits.len()),
                "",
            ));
        }
        Ok(Mask {
            width: rle.width,
            height: rle.height,
            bits,
        })
    }
}

impl std::fmt::Display for Rle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}:{} runs", self.width, self.height, self.runs.len())
    }
}

/// Fills the convex hull (boundary inclusive) of integer-rounded pixels.
///
/// Inputs with fewer than three distinct pixels or with all pixels collinear
/// fall back to the segment spanning the extreme pixels, dilated by one pixel.
pub fn convex_hull_fill<T: Real>(pixels: &[(T, T)], width: u32, height: u32) -> Result<Mask> {
    if pixels.is_empty() {
        return Err(Error::Contract("convex hull of an empty pixel set".into()));
    }
    let mut pts: Vec<(i64, i64)> = pixels
        .iter()
        .map(|&(u, v)| (u.round().to_i64().unwrap_or(0), v.round().to_i64().unwrap_or(0)))
        .collect();
    pts.sort_unstable();
    pts.dedup();

    let hull = monotone_chain(&pts);
    let mut mask = Mask::empty(width, height);
    if hull.len() < 3 {
        let (a, b) = (pts[0], *pts.last().unwrap());
        for (x, y) in segment_pixels(a, b) {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    mask.set_clipped(x + dx, y + dy);
                }
            }
        }
        return Ok(mask);
    }

    let (min_x, max_x) = hull.iter().fold((i64::MAX, i64::MIN), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (min_y, max_y) = hull.iter().fold((i64::MAX, i64::MIN), |(a, b), p| (a.min(p.1), b.max(p.1)));
    let x_lo = min_x.max(0);
    let x_hi = max_x.min(width as i64 - 1);
    let y_lo = min_y.max(0);
    let y_hi = max_y.min(height as i64 - 1);
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            if inside_ccw(&hull, (x, y)) {
                mask.set(x as u32, y as u32, true);
            }
        }
    }
    Ok(mask)
}

fn cross(o: (i64, i64), a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Counter-clockwise hull without collinear vertices; input sorted and deduplicated.
fn monotone_chain(pts: &[(i64, i64)]) -> Vec<(i64, i64)> {
    if pts.len() < 3 {
        return pts.to_vec();
    }
    let mut hull: Vec<(i64, i64)> = Vec::with_capacity(pts.len() * 2);
    for &p in pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

fn inside_ccw(hull: &[(i64, i64)], p: (i64, i64)) -> bool {
    (0..hull.len()).all(|i| cross(hull[i], hull[(i + 1) % hull.len()], p) >= 0)
}

/// Integer pixels along the segment `a → b` (inclusive), by uniform stepping.
fn segment_pixels(a: (i64, i64), b: (i64, i64)) -> Vec<(i64, i64)> {
    let steps = (b.0 - a.0).abs().max((b.1 - a.1).abs());
    if steps == 0 {
        return vec![a];
    }
    (0..=steps)
        .map(|s| {
            let t = s as f64 / steps as f64;
            (
                (a.0 as f64 + t * (b.0 - a.0) as f64).round() as i64,
                (a.1 as f64 + t * (b.1 - a.1) as f64).round() as i64,
            )
        })
        .collect()
}

//! Multi-view lifting of 2D masks into 3D candidates: per-point voting,
//! thresholding, density clustering and overlap merging.

use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use crate::dbscan::dbscan;
use crate::error::{Error, Result};
use crate::geometry::{depth_residuals, project_points};
use crate::linalg::{Aabb, Vec3};
use crate::pointset::PointSet;
use crate::raster::Mask;
use crate::scalar::Real;
use crate::scene::{Frame, PointCloud};
use crate::stats::{depth_consistency_filter, wilson_lower_bound, DepthFilterParams};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteTable {
    pub n_vis: Vec<u32>,
    pub n_fg: Vec<u32>,
}

impl VoteTable {
    pub fn zeros(point_count: usize) -> Self {
        VoteTable {
            n_vis: vec![0; point_count],
            n_fg: vec![0; point_count],
        }
    }

    pub fn point_count(&self) -> usize {
        self.n_vis.len()
    }

    fn add(mut self, other: VoteTable) -> VoteTable {
        for (a, b) in self.n_vis.iter_mut().zip(other.n_vis) {
            *a += b;
        }
        for (a, b) in self.n_fg.iter_mut().zip(other.n_fg) {
            *a += b;
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VotingMode {
    Ratio,
    Wilson,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VotingParams<T: Real> {
    pub rho0: T,
    pub theta_vis: u32,
    pub mode: VotingMode,
    pub z: T,
}

impl<T: Real> Default for VotingParams<T> {
    fn default() -> Self {
        VotingParams {
            rho0: T::lit(0.70),
            theta_vis: 3,
            mode: VotingMode::Ratio,
            z: T::lit(1.96),
        }
    }
}

impl<T: Real> VotingParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho0 > T::zero() && self.rho0 < T::one()) {
            return Err(Error::Validation(format!("rho0 must lie in (0,1), got {}", self.rho0)));
        }
        if !(self.z > T::zero()) {
            return Err(Error::Validation(format!("z must be positive, got {}", self.z)));
        }
        Ok(())
    }

    /// Foreground decision for one point.
    pub fn keeps(&self, n_fg: u32, n_vis: u32) -> bool {
        if n_vis == 0 || n_vis <= self.theta_vis {
            return false;
        }
        let rate = match self.mode {
            VotingMode::Ratio => T::from_count(n_fg as usize) / T::from_count(n_vis as usize),
            VotingMode::Wilson => match wilson_lower_bound(n_fg as u64, n_vis as u64, self.z) {
                Ok(v) => v,
                Err(_) => return false,
            },
        };
        rate > self.rho0
    }
}

/// Every hyperparameter of lifting, clustering and merging.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionParams<T: Real> {
    pub filter: DepthFilterParams<T>,
    pub voting: VotingParams<T>,
    pub dbscan_eps: T,
    pub dbscan_min_pts: usize,
    pub theta_iou: T,
    pub theta_rec: T,
}

impl<T: Real> Default for FusionParams<T> {
    fn default() -> Self {
        FusionParams {
            filter: DepthFilterParams::default(),
            voting: VotingParams::default(),
            dbscan_eps: T::lit(0.03),
            dbscan_min_pts: 5,
            theta_iou: T::lit(0.30),
            theta_rec: T::lit(0.60),
        }
    }
}

impl<T: Real> FusionParams<T> {
    pub fn validate(&self) -> Result<()> {
        self.filter.validate()?;
        self.voting.validate()?;
        if !(self.dbscan_eps > T::zero()) || self.dbscan_min_pts < 1 {
            return Err(Error::Validation("DBSCAN needs eps > 0 and min_pts >= 1".into()));
        }
        let unit = |v: T| v > T::zero() && v < T::one();
        if !unit(self.theta_iou) || !unit(self.theta_rec) {
            return Err(Error::Validation("merge thresholds must lie in (0,1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate3D<T: Real> {
    pub point_indices: PointSet,
    pub centroid: Vec3<T>,
    pub aabb: Aabb<T>,
    /// Highest per-point foreground count among members.
    pub support: u32,
}

impl<T: Real> Candidate3D<T> {
    /// Computes centroid and tight box; `None` for an empty set.
    pub fn from_points(point_indices: PointSet, cloud: &PointCloud<T>, support: u32) -> Option<Self> {
        let centroid = cloud.centroid_of(&point_indices)?;
        let aabb = Aabb::from_points(point_indices.iter().map(|i| cloud.points[i]))?;
        Some(Candidate3D {
            point_indices,
            centroid,
            aabb,
            support,
        })
    }

    pub fn len(&self) -> usize {
        self.point_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.point_indices.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool<T: Real> {
    pub candidates: Vec<Candidate3D<T>>,
    pub params: FusionParams<T>,
}

/// Points of `cloud` seen by `frame`, paired with their nearest pixel.
///
/// A point is seen when it projects in bounds onto a valid depth reading and
/// passes the frame-wide median/MAD residual filter.
pub fn frame_visibility<T: Real>(
    cloud: &PointCloud<T>,
    frame: &Frame<T>,
    filter: &DepthFilterParams<T>,
) -> Vec<(usize, u32, u32)> {
    let proj = project_points(&cloud.points, &frame.pose, &frame.intrinsics);
    let residuals = depth_residuals(&proj, &frame.depth);
    let kept = depth_consistency_filter(&residuals, filter);
    let mut pixel = vec![None; cloud.len()];
    for p in &proj {
        pixel[p.point_index] = Some(frame.intrinsics.nearest_pixel(p.u, p.v));
    }
    kept.into_iter()
        .map(|i| {
            let (x, y) = pixel[i].expect("kept points were projected");
            (i, x, y)
        })
        .collect()
}

/// Visibility of every point in every frame, reusable across label queries.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityIndex {
    pub point_count: usize,
    /// Per frame, the visible points with their pixels.
    pub frames: Vec<(u32, Vec<(usize, u32, u32)>)>,
}

impl VisibilityIndex {
    pub fn compute<T: Real>(
        cloud: &PointCloud<T>,
        frames: &[Frame<T>],
        filter: &DepthFilterParams<T>,
    ) -> Self {
        VisibilityIndex {
            point_count: cloud.len(),
            frames: frames
                .par_iter()
                .map(|f| (f.index, frame_visibility(cloud, f, filter)))
                .collect(),
        }
    }

    /// Vote counts for per-frame mask lists keyed by frame index.
    pub fn votes(&self, masks: &[(u32, Vec<Mask>)]) -> VoteTable {
        self.frames
            .par_iter()
            .map(|(index, visible)| {
                let mut t = VoteTable::zeros(self.point_count);
                let frame_masks = masks
                    .iter()
                    .find(|(i, _)| i == index)
                    .map(|(_, m)| m.as_slice())
                    .unwrap_or(&[]);
                for &(i, x, y) in visible {
                    t.n_vis[i] += 1;
                    if frame_masks.iter().any(|m| m.get(x, y)) {
                        t.n_fg[i] += 1;
                    }
                }
                t
            })
            .reduce(|| VoteTable::zeros(self.point_count), VoteTable::add)
    }
}

/// Accumulates visibility and foreground counts over frames.
pub fn accumulate_votes<T: Real>(
    cloud: &PointCloud<T>,
    frames_with_masks: &[(&Frame<T>, Vec<Mask>)],
    filter: &DepthFilterParams<T>,
) -> Result<VoteTable> {
    for (frame, masks) in frames_with_masks {
        let (w, h) = frame.dimensions();
        if let Some(m) = masks.iter().find(|m| (m.width(), m.height()) != (w, h)) {
            return Err(Error::Validation(format!(
                "frame {}: mask is {}x{}, frame is {w}x{h}",
                frame.index,
                m.width(),
                m.height()
            )));
        }
    }
    Ok(frames_with_masks
        .par_iter()
        .map(|(frame, masks)| {
            let mut t = VoteTable::zeros(cloud.len());
            for (i, x, y) in frame_visibility(cloud, frame, filter) {
                t.n_vis[i] += 1;
                if masks.iter().any(|m| m.get(x, y)) {
                    t.n_fg[i] += 1;
                }
            }
            t
        })
        .reduce(|| VoteTable::zeros(cloud.len()), VoteTable::add))
}

pub fn threshold_foreground<T: Real>(votes: &VoteTable, params: &VotingParams<T>) -> PointSet {
    (0..votes.point_count())
        .filter(|&i| params.keeps(votes.n_fg[i], votes.n_vis[i]))
        .collect()
}

fn canonical_order<T: Real>(a: &Candidate3D<T>, b: &Candidate3D<T>) -> std::cmp::Ordering {
    b.len()
        .cmp(&a.len())
        .then_with(|| a.centroid.lex_cmp(&b.centroid))
        .then_with(|| a.point_indices.as_slice().cmp(b.point_indices.as_slice()))
}

/// DBSCAN over the foreground points; noise is dropped. Sorted by size
/// descending, then centroid.
pub fn cluster_candidates<T: Real>(
    foreground: &PointSet,
    cloud: &PointCloud<T>,
    eps: T,
    min_pts: usize,
    votes: Option<&VoteTable>,
) -> Vec<Candidate3D<T>> {
    let idx = foreground.as_slice();
    let pts: Vec<Vec3<T>> = idx.iter().map(|&i| cloud.points[i]).collect();
    let labels = dbscan(&pts, eps, min_pts);
    let n_clusters = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    for (k, l) in labels.iter().enumerate() {
        if let Some(l) = l {
            members[*l].push(idx[k]);
        }
    }
    let mut out: Vec<Candidate3D<T>> = members
        .into_iter()
        .filter_map(|m| {
            let support = votes.map_or(0, |v| m.iter().map(|&i| v.n_fg[i]).max().unwrap_or(0));
            Candidate3D::from_points(PointSet::from(m), cloud, support)
        })
        .collect();
    out.sort_by(canonical_order);
    out
}

/// `|A∩B| / min(|A|, |B|)`; zero when either is empty.
pub fn min_recall(a: &PointSet, b: &PointSet) -> f64 {
    let m = a.len().min(b.len());
    if m == 0 {
        0.0
    } else {
        a.intersection_len(b) as f64 / m as f64
    }
}

fn should_merge<T: Real>(a: &PointSet, b: &PointSet, theta_iou: T, theta_rec: T) -> bool {
    a.iou(b) > theta_iou.as_f64() || min_recall(a, b) > theta_rec.as_f64()
}

/// Unions overlapping candidates to a fixed point, then hands every point
/// still shared by several candidates to the largest of them (lowest index on
/// ties) so the pool is disjoint. Centroids and boxes are recomputed.
pub fn merge_candidates<T: Real>(
    pool: Vec<Candidate3D<T>>,
    theta_iou: T,
    theta_rec: T,
    cloud: &PointCloud<T>,
) -> Vec<Candidate3D<T>> {
    let mut sets: Vec<(PointSet, u32)> = pool
        .into_iter()
        .filter(|c| !c.is_empty())
        .map(|c| (c.point_indices, c.support))
        .collect();
    'outer: loop {
        for i in 0..sets.len() {
            for j in i + 1..sets.len() {
                if should_merge(&sets[i].0, &sets[j].0, theta_iou, theta_rec) {
                    let (b, sb) = sets.remove(j);
                    sets[i].0 = sets[i].0.union(&b);
                    sets[i].1 = sets[i].1.max(sb);
                    continue 'outer;
                }
            }
        }
        break;
    }

    let mut owner: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
    for (k, (set, _)) in sets.iter().enumerate() {
        for i in set.iter() {
            owner
                .entry(i)
                .and_modify(|o| {
                    if sets[k].0.len() > sets[*o].0.len() {
                        *o = k;
                    }
                })
                .or_insert(k);
        }
    }
    let mut out: Vec<Candidate3D<T>> = sets
        .iter()
        .enumerate()
        .filter_map(|(k, (set, support))| {
            let own: PointSet = set.iter().filter(|i| owner[i] == k).collect();
            Candidate3D::from_points(own, cloud, *support)
        })
        .collect();
    out.sort_by(canonical_order);
    out
}

/// Votes, thresholds, clusters and merges one label's masks into a pool.
pub fn fuse<T: Real>(
    cloud: &PointCloud<T>,
    visibility: &VisibilityIndex,
    masks: &[(u32, Vec<Mask>)],
    params: &FusionParams<T>,
) -> Result<CandidatePool<T>> {
    params.validate()?;
    if visibility.point_count != cloud.len() {
        return Err(Error::Contract(format!(
            "visibility covers {} points, cloud has {}",
            visibility.point_count,
            cloud.len()
        )));
    }
    let votes = visibility.votes(masks);
    let fg = threshold_foreground(&votes, &params.voting);
    let clusters = cluster_candidates(&fg, cloud, params.dbscan_eps, params.dbscan_min_pts, Some(&votes));
    let candidates = merge_candidates(clusters, params.theta_iou, params.theta_rec, cloud);
    Ok(CandidatePool {
        candidates,
        params: *params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraIntrinsics, Pose};
    use crate::raster::DepthMap;
    use image::RgbImage;

    fn cloud(points: Vec<Vec3<f64>>) -> PointCloud<f64> {
        PointCloud::new(points, None).unwrap()
    }

    fn flat_frame(index: u32, depth: f64) -> Frame<f64> {
        let intr = CameraIntrinsics::new(100.0, 100.0, 32.0, 24.0, 64, 48).unwrap();
        Frame::new(
            index,
            RgbImage::new(64, 48),
            DepthMap::filled(64, 48, depth),
            intr,
            Pose::identity(),
        )
        .unwrap()
    }

    #[test]
    fn ratio_examples() {
        let p = VotingParams::<f64>::default();
        assert!(p.keeps(3, 4));
        assert!(!p.keeps(3, 3));
        assert!(!p.keeps(0, 0));
        assert!(!p.keeps(7, 10));
        assert!(p.keeps(8, 10));
    }

    #[test]
    fn visible_point_under_mask_counts_both() {
        let c = cloud(vec![Vec3::new(0.0, 0.0, 2.0)]);
        let f = flat_frame(0, 2.0);
        let mask = Mask::from_fn(64, 48, |x, y| x == 32 && y == 24);
        let v = accumulate_votes(&c, &[(&f, vec![mask])], &DepthFilterParams::default()).unwrap();
        assert_eq!((v.n_vis[0], v.n_fg[0]), (1, 1));
    }

    #[test]
    fn occluded_point_counts_nothing() {
        // Twenty points on the visible surface fix the median; one sits 0.5 m behind it.
        let mut pts: Vec<Vec3<f64>> = (0..20).map(|i| Vec3::new(0.01 * i as f64, 0.0, 2.0)).collect();
        pts.push(Vec3::new(0.0, 0.0, 2.5));
        let c = cloud(pts);
        let f = flat_frame(0, 2.0);
        let mask = Mask::from_fn(64, 48, |_, _| true);
        let v = accumulate_votes(&c, &[(&f, vec![mask])], &DepthFilterParams::default()).unwrap();
        assert_eq!((v.n_vis[20], v.n_fg[20]), (0, 0));
        assert_eq!((v.n_vis[0], v.n_fg[0]), (1, 1));
    }

    #[test]
    fn mask_size_mismatch_is_rejected() {
        let c = cloud(vec![Vec3::new(0.0, 0.0, 2.0)]);
        let f = flat_frame(0, 2.0);
        let err = accumulate_votes(&c, &[(&f, vec![Mask::empty(10, 10)])], &DepthFilterParams::default());
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    #[test]
    fn two_blobs_make_two_candidates() {
        let mut pts = Vec::new();
        for k in 0..2 {
            for i in 0..50 {
                let a = i as f64 * 0.37;
                pts.push(Vec3::new(k as f64 * 0.1 + 0.005 * a.cos(), 0.005 * a.sin(), 0.0001 * i as f64));
            }
        }
        let c = cloud(pts);
        let fg: PointSet = (0..100).collect();
        let out = cluster_candidates(&fg, &c, 0.03, 5, None);
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|c| c.len() == 50));
        assert!(out[0].centroid.x < out[1].centroid.x);
    }

    #[test]
    fn nested_candidate_is_absorbed() {
        let pts: Vec<Vec3<f64>> = (0..100).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let c = cloud(pts);
        let big = Candidate3D::from_points((0..100).collect(), &c, 4).unwrap();
        let small = Candidate3D::from_points((0..10).collect(), &c, 9).unwrap();
        assert!((big.point_indices.iou(&small.point_indices) - 0.1).abs() < 1e-12);
        let out = merge_candidates(vec![small, big], 0.3, 0.6, &c);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].len(), 100);
        assert_eq!(out[0].support, 9);
    }

    #[test]
    fn disjoint_candidates_stay_apart() {
        let pts: Vec<Vec3<f64>> = (0..20).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let c = cloud(pts);
        let a = Candidate3D::from_points((0..10).collect(), &c, 1).unwrap();
        let b = Candidate3D::from_points((10..20).collect(), &c, 1).unwrap();
        assert_eq!(merge_candidates(vec![a, b], 0.3, 0.6, &c).len(), 2);
    }

    #[test]
    fn partial_overlap_below_thresholds_is_made_disjoint() {
        let pts: Vec<Vec3<f64>> = (0..30).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let c = cloud(pts);
        let a = Candidate3D::from_points((0..20).collect(), &c, 1).unwrap();
        let b = Candidate3D::from_points((15..30).collect(), &c, 1).unwrap();
        let out = merge_candidates(vec![a, b], 0.3, 0.6, &c);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].point_indices.intersection_len(&out[1].point_indices), 0);
        assert_eq!(out[0].len(), 20);
    }
}

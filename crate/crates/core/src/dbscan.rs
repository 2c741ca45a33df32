//! Density clustering over 3D points with a uniform grid index.

use std::collections::HashMap;

use crate::linalg::Vec3;
use crate::scalar::Real;

struct Grid {
    cell: f64,
    buckets: HashMap<(i64, i64, i64), Vec<usize>>,
}

impl Grid {
    fn key<T: Real>(&self, p: Vec3<T>) -> (i64, i64, i64) {
        let k = |v: T| (v.as_f64() / self.cell).floor() as i64;
        (k(p.x), k(p.y), k(p.z))
    }

    fn new<T: Real>(points: &[Vec3<T>], cell: f64) -> Self {
        let mut g = Grid {
            cell,
            buckets: HashMap::new(),
        };
        for (i, &p) in points.iter().enumerate() {
            let key = g.key(p);
            g.buckets.entry(key).or_default().push(i);
        }
        g
    }

    /// Indices within `eps` of point `i`, itself included, ascending.
    fn neighbors<T: Real>(&self, points: &[Vec3<T>], i: usize, eps: T) -> Vec<usize> {
        let (kx, ky, kz) = self.key(points[i]);
        let eps2 = eps * eps;
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(b) = self.buckets.get(&(kx + dx, ky + dy, kz + dz)) {
                        out.extend(b.iter().copied().filter(|&j| {
                            let d = points[j] - points[i];
                            d.dot(d) <= eps2
                        }));
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// DBSCAN labels: `Some(cluster)` or `None` for noise.
///
/// A point is core when at least `min_pts` points (itself included) lie within
/// `eps`. Clusters are the connected components of core points; a border point
/// joins the cluster of its nearest core neighbour, ties broken by the
/// lexicographically smallest core coordinates, so the partition does not
/// depend on input order. Cluster numbers follow the smallest member index.
pub fn dbscan<T: Real>(points: &[Vec3<T>], eps: T, min_pts: usize) -> Vec<Option<usize>> {
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    let grid = Grid::new(points, eps.as_f64().max(f64::MIN_POSITIVE));
    let neighbors: Vec<Vec<usize>> = (0..n).map(|i| grid.neighbors(points, i, eps)).collect();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts.max(1)).collect();

    let mut parent: Vec<usize> = (0..n).collect();
    for i in (0..n).filter(|&i| core[i]) {
        for &j in neighbors[i].iter().filter(|&&j| core[j] && j > i) {
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }

    let mut root_of: Vec<Option<usize>> = vec![None; n];
    for i in 0..n {
        if core[i] {
            root_of[i] = Some(find(&mut parent, i));
        } else {
            let anchor = neighbors[i]
                .iter()
                .copied()
                .filter(|&j| core[j])
                .min_by(|&a, &b| {
                    let (da, db) = (points[a] - points[i], points[b] - points[i]);
                    da.dot(da)
                        .total_order(db.dot(db))
                        .then_with(|| points[a].lex_cmp(&points[b]))
                });
            root_of[i] = anchor.map(|j| find(&mut parent, j));
        }
    }

    let mut numbering: HashMap<usize, usize> = HashMap::new();
    let mut labels = vec![None; n];
    for i in 0..n {
        if let Some(r) = root_of[i] {
            let next = numbering.len();
            labels[i] = Some(*numbering.entry(r).or_insert(next));
        }
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_with_small_gaps_is_one_cluster() {
        let pts: Vec<Vec3<f64>> = (0..30).map(|i| Vec3::new(i as f64 * 0.02, 0.0, 0.0)).collect();
        let labels = dbscan(&pts, 0.03, 2);
        assert!(labels.iter().all(|l| *l == Some(0)));
    }

    #[test]
    fn isolated_point_is_noise() {
        let mut pts: Vec<Vec3<f64>> = (0..6).map(|i| Vec3::new(i as f64 * 0.001, 0.0, 0.0)).collect();
        pts.push(Vec3::new(1.0, 1.0, 1.0));
        let labels = dbscan(&pts, 0.03, 5);
        assert_eq!(labels[6], None);
        assert!(labels[..6].iter().all(|l| *l == Some(0)));
    }

    #[test]
    fn negative_coordinates_use_correct_cells() {
        let pts = vec![Vec3::<f64>::new(-0.001, 0.0, 0.0), Vec3::new(0.001, 0.0, 0.0)];
        assert_eq!(dbscan(&pts, 0.01, 2), vec![Some(0), Some(0)]);
    }
}

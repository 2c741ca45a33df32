use serde::{Deserialize, Serialize};

/// Sorted, duplicate-free set of point indices into a scene cloud.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(from = "Vec<usize>")]
pub struct PointSet(Vec<usize>);

impl From<Vec<usize>> for PointSet {
    fn from(mut v: Vec<usize>) -> Self {
        v.sort_unstable();
        v.dedup();
        PointSet(v)
    }
}

impl FromIterator<usize> for PointSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        PointSet::from(iter.into_iter().collect::<Vec<_>>())
    }
}

impl PointSet {
    pub fn new() -> Self {
        PointSet(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    pub fn max(&self) -> Option<usize> {
        self.0.last().copied()
    }

    pub fn intersection_len(&self, other: &PointSet) -> usize {
        let (mut i, mut j, mut n) = (0, 0, 0);
        let (a, b) = (&self.0, &other.0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }

    pub fn union(&self, other: &PointSet) -> PointSet {
        self.iter().chain(other.iter()).collect()
    }

    pub fn difference(&self, other: &PointSet) -> PointSet {
        PointSet(self.iter().filter(|&i| !other.contains(i)).collect())
    }

    /// `|A∩B| / |A∪B|`; zero when both are empty.
    pub fn iou(&self, other: &PointSet) -> f64 {
        let inter = self.intersection_len(other);
        let union = self.len() + other.len() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_on_construction() {
        let s = PointSet::from(vec![5, 1, 5, 3]);
        assert_eq!(s.as_slice(), &[1, 3, 5]);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, "[1,3,5]");
        let back: PointSet = serde_json::from_str("[3,1,1]").unwrap();
        assert_eq!(back.as_slice(), &[1, 3]);
    }

    #[test]
    fn set_arithmetic() {
        let a: PointSet = (0..10).collect();
        let b: PointSet = (5..15).collect();
        assert_eq!(a.intersection_len(&b), 5);
        assert_eq!(a.union(&b).len(), 15);
        assert_eq!(a.difference(&b).as_slice(), &[0, 1, 2, 3, 4]);
        assert!((a.iou(&b) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(PointSet::new().iou(&PointSet::new()), 0.0);
    }
}

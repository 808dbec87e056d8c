use std::collections::HashMap;

use crate::geom::Vec2;

/// Uniform-grid bucket index over point positions.
#[derive(Debug, Clone)]
pub struct SpatialHash {
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
}

impl SpatialHash {
    pub fn new(cell: f64, points: impl IntoIterator<Item = (usize, Vec2)>) -> Self {
        assert!(cell > 0.0);
        let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points {
            buckets.entry(Self::key(cell, p)).or_default().push(i);
        }
        Self { cell, buckets }
    }

    fn key(cell: f64, p: Vec2) -> (i64, i64) {
        ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64)
    }

    /// Indices of every point whose bucket overlaps the disc of `radius`
    /// around `p`, in ascending order. A superset of the points within
    /// `radius`.
    pub fn query(&self, p: Vec2, radius: f64, out: &mut Vec<usize>) {
        out.clear();
        let (x0, y0) = Self::key(self.cell, p - Vec2::new(radius, radius));
        let (x1, y1) = Self::key(self.cell, p + Vec2::new(radius, radius));
        for y in y0..=y1 {
            for x in x0..=x1 {
                if let Some(b) = self.buckets.get(&(x, y)) {
                    out.extend_from_slice(b);
                }
            }
        }
        out.sort_unstable();
    }
}

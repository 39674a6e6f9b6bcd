//! Static 3-d tree for radius-bounded nearest neighbour lookups.

use crate::eval::Point;

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Point>,
    order: Vec<u32>,
}

impl KdTree {
    pub fn new(points: Vec<Point>) -> Self {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        build(&points, &mut order, 0);
        Self { points, order }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    /// Index and squared distance of the nearest point strictly closer than
    /// `max_dist`.
    pub fn nearest_within(&self, q: &Point, max_dist: f64) -> Option<(usize, f64)> {
        let mut best = (usize::MAX, max_dist * max_dist);
        self.search(q, &self.order, 0, &mut best);
        (best.0 != usize::MAX).then_some(best)
    }

    fn search(&self, q: &Point, slice: &[u32], depth: usize, best: &mut (usize, f64)) {
        if slice.is_empty() {
            return;
        }
        let mid = slice.len() / 2;
        let idx = slice[mid] as usize;
        let p = &self.points[idx];
        let d2 = (p - q).norm_squared();
        if d2 < best.1 {
            *best = (idx, d2);
        }
        let axis = depth % 3;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            (&slice[..mid], &slice[mid + 1..])
        } else {
            (&slice[mid + 1..], &slice[..mid])
        };
        self.search(q, near, depth + 1, best);
        if diff * diff < best.1 {
            self.search(q, far, depth + 1, best);
        }
    }
}

fn build(points: &[Point], slice: &mut [u32], depth: usize) {
    if slice.len() <= 1 {
        return;
    }
    let axis = depth % 3;
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize][axis].total_cmp(&points[b as usize][axis]).then(a.cmp(&b))
    });
    let (left, right) = slice.split_at_mut(mid);
    build(points, left, depth + 1);
    build(points, &mut right[1..], depth + 1);
}

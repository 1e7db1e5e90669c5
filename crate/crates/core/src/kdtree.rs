//! Static k-d tree over points of run-time dimension.
//!
//! The tree is implicit: `order` is permuted so that every range `[lo, hi)`
//! holds its median at `(lo + hi) / 2`, split on axis `depth % dim`.

use crate::geometry::dist_sq;

#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    coords: Vec<f64>,
    order: Vec<usize>,
}

impl KdTree {
    /// `coords` is a flat row-major buffer of `coords.len() / dim` points.
    pub fn new(dim: usize, coords: Vec<f64>) -> Self {
        assert!(dim > 0, "k-d tree dimension must be positive");
        assert_eq!(coords.len() % dim, 0, "flat buffer is not a multiple of dim");
        let n = coords.len() / dim;
        let mut tree = KdTree { dim, coords, order: (0..n).collect() };
        let mut order = std::mem::take(&mut tree.order);
        tree.build(&mut order, 0);
        tree.order = order;
        tree
    }

    pub fn from_points<'a>(dim: usize, pts: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let mut coords = Vec::new();
        for p in pts {
            coords.extend_from_slice(p);
        }
        Self::new(dim, coords)
    }

    fn build(&self, idx: &mut [usize], depth: usize) {
        if idx.len() <= 1 {
            return;
        }
        let axis = depth % self.dim;
        let mid = idx.len() / 2;
        idx.select_nth_unstable_by(mid, |&a, &b| {
            self.coord(a, axis).total_cmp(&self.coord(b, axis))
        });
        let (left, right) = idx.split_at_mut(mid);
        self.build(left, depth + 1);
        self.build(&mut right[1..], depth + 1);
    }

    #[inline]
    fn coord(&self, i: usize, axis: usize) -> f64 {
        self.coords[i * self.dim + axis]
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Calls `visit(index, squared_distance)` for every point strictly
    /// closer than `radius` to `query`.
    pub fn within(&self, query: &[f64], radius: f64, mut visit: impl FnMut(usize, f64)) {
        if radius <= 0.0 || self.is_empty() {
            return;
        }
        self.within_rec(query, radius, radius * radius, 0, self.order.len(), 0, &mut visit);
    }

    #[allow(clippy::too_many_arguments)]
    fn within_rec(
        &self,
        q: &[f64],
        r: f64,
        r2: f64,
        lo: usize,
        hi: usize,
        depth: usize,
        visit: &mut impl FnMut(usize, f64),
    ) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let i = self.order[mid];
        let d2 = dist_sq(q, self.point(i));
        if d2 < r2 {
            visit(i, d2);
        }
        let axis = depth % self.dim;
        let diff = q[axis] - self.coord(i, axis);
        if diff - r < 0.0 {
            self.within_rec(q, r, r2, lo, mid, depth + 1, visit);
        }
        if diff + r >= 0.0 {
            self.within_rec(q, r, r2, mid + 1, hi, depth + 1, visit);
        }
    }

    /// Nearest point as `(index, squared_distance)`; ties go to the
    /// smallest index.
    pub fn nearest(&self, query: &[f64]) -> Option<(usize, f64)> {
        if self.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_rec(query, 0, self.order.len(), 0, &mut best);
        Some(best)
    }

    fn nearest_rec(&self, q: &[f64], lo: usize, hi: usize, depth: usize, best: &mut (usize, f64)) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let i = self.order[mid];
        let d2 = dist_sq(q, self.point(i));
        if d2 < best.1 || (d2 == best.1 && i < best.0) {
            *best = (i, d2);
        }
        let axis = depth % self.dim;
        let diff = q[axis] - self.coord(i, axis);
        let (first, second) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.nearest_rec(q, first.0, first.1, depth + 1, best);
        if diff * diff <= best.1 {
            self.nearest_rec(q, second.0, second.1, depth + 1, best);
        }
    }
}

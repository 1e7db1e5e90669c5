//! Points, trajectories and the discrete Fréchet distance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// A point in R^d.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return invalid("point must have at least one coordinate");
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return invalid(format!("non-finite coordinate in {coords:?}"));
        }
        Ok(Point(coords))
    }

    /// Builds a point without validation. Callers guarantee finiteness.
    pub(crate) fn from_vec(coords: Vec<f64>) -> Self {
        Point(coords)
    }

    pub fn xy(x: f64, y: f64) -> Self {
        Point(vec![x, y])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }
}

impl From<[f64; 2]> for Point {
    fn from(p: [f64; 2]) -> Self {
        Point(p.to_vec())
    }
}

/// Squared L2 distance over raw coordinate slices of equal length.
#[inline]
pub(crate) fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// L2 distance between two points of the same dimension.
pub fn euclidean(a: &Point, b: &Point) -> Result<f64> {
    if a.dim() != b.dim() {
        return invalid(format!("dimension mismatch: {} vs {}", a.dim(), b.dim()));
    }
    Ok(dist_sq(a.coords(), b.coords()).sqrt())
}

/// An identified, non-empty polyline of uniform dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    points: Vec<Point>,
}

impl Trajectory {
    pub fn new(id: impl Into<String>, points: Vec<Point>) -> Result<Self> {
        let id = id.into();
        let Some(first) = points.first() else {
            return invalid(format!("trajectory {id:?} is empty"));
        };
        let dim = first.dim();
        if dim == 0 {
            return invalid(format!("trajectory {id:?} has zero-dimensional points"));
        }
        for (i, p) in points.iter().enumerate() {
            if p.dim() != dim {
                return invalid(format!(
                    "trajectory {id:?}: point {i} has dimension {}, expected {dim}",
                    p.dim()
                ));
            }
            if !p.is_finite() {
                return invalid(format!("trajectory {id:?}: point {i} is not finite"));
            }
        }
        Ok(Trajectory { id, points })
    }

    pub fn from_xy(id: impl Into<String>, xy: &[(f64, f64)]) -> Result<Self> {
        Self::new(id, xy.iter().map(|&(x, y)| Point::xy(x, y)).collect())
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    pub fn first(&self) -> &Point {
        &self.points[0]
    }

    pub fn last(&self) -> &Point {
        &self.points[self.points.len() - 1]
    }

    /// Total polyline length.
    pub fn arc_length(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| dist_sq(w[0].coords(), w[1].coords()).sqrt())
            .sum()
    }
}

/// Discrete Fréchet distance between two trajectories.
///
/// Runs the coupling DP over the P×Q point grid keeping two rows of the
/// shorter side.
pub fn frechet_distance(t1: &Trajectory, t2: &Trajectory) -> Result<f64> {
    if t1.is_empty() || t2.is_empty() {
        return invalid("frechet_distance on an empty trajectory");
    }
    if t1.dim() != t2.dim() {
        return invalid(format!(
            "dimension mismatch between {:?} ({}) and {:?} ({})",
            t1.id,
            t1.dim(),
            t2.id,
            t2.dim()
        ));
    }
    let (outer, inner) = if t1.len() >= t2.len() {
        (t1.points(), t2.points())
    } else {
        (t2.points(), t1.points())
    };
    let n = inner.len();
    let mut prev = vec![0.0f64; n];
    let mut cur = vec![0.0f64; n];

    // Squared distances throughout; sqrt is monotone so max/min commute.
    for (i, p) in outer.iter().enumerate() {
        for (j, q) in inner.iter().enumerate() {
            let d = dist_sq(p.coords(), q.coords());
            cur[j] = match (i, j) {
                (0, 0) => d,
                (0, _) => d.max(cur[j - 1]),
                (_, 0) => d.max(prev[0]),
                _ => d.max(prev[j].min(prev[j - 1]).min(cur[j - 1])),
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[n - 1].sqrt())
}

/// Symmetric, zero-diagonal matrix of pairwise distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    size: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    /// Builds a matrix from row-major entries, checking symmetry, a zero
    /// diagonal and finite non-negative values.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let size = rows.len();
        if size == 0 {
            return invalid("distance matrix must be at least 1x1");
        }
        let mut data = Vec::with_capacity(size * size);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != size {
                return invalid(format!("row {i} has {} entries, expected {size}", row.len()));
            }
            data.extend_from_slice(row);
        }
        let m = DistanceMatrix { size, data };
        for i in 0..size {
            if m.get(i, i) != 0.0 {
                return invalid(format!("diagonal entry {i} is {}", m.get(i, i)));
            }
            for j in 0..size {
                let v = m.get(i, j);
                if !v.is_finite() || v < 0.0 {
                    return invalid(format!("entry ({i},{j}) = {v} is not a finite non-negative"));
                }
                if v != m.get(j, i) {
                    return invalid(format!("matrix is not symmetric at ({i},{j})"));
                }
            }
        }
        Ok(m)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.size + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.size)
    }

    /// The matrix restricted to `keep`, in that order.
    pub fn submatrix(&self, keep: &[usize]) -> DistanceMatrix {
        let data = keep.iter().flat_map(|&i| keep.iter().map(move |&j| (i, j))).map(|(i, j)| self.get(i, j)).collect();
        DistanceMatrix { size: keep.len(), data }
    }
}

/// All-pairs Fréchet distances; upper triangle evaluated in parallel.
pub fn distance_matrix(ts: &[Trajectory]) -> Result<DistanceMatrix> {
    let m = ts.len();
    if m == 0 {
        return invalid("distance_matrix needs at least one trajectory");
    }
    let dim = ts[0].dim();
    if let Some(t) = ts.iter().find(|t| t.dim() != dim) {
        return invalid(format!("trajectory {:?} has dimension {}, expected {dim}", t.id, t.dim()));
    }
    let pairs: Vec<(usize, usize)> =
        (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect();
    let values = pairs
        .par_iter()
        .map(|&(i, j)| frechet_distance(&ts[i], &ts[j]))
        .collect::<Result<Vec<f64>>>()?;
    let mut data = vec![0.0; m * m];
    for (&(i, j), v) in pairs.iter().zip(values) {
        data[i * m + j] = v;
        data[j * m + i] = v;
    }
    Ok(DistanceMatrix { size: m, data })
}

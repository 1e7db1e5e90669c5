//! Synthetic trajectory corpora and density-grid random walks.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{Point, Trajectory};
use crate::seed::Seed;

/// A corpus source, as written in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Junction {
        branches: usize,
        per_branch: usize,
        #[serde(default)]
        jitter: f64,
    },
    FixedEndpoints {
        n: usize,
    },
    ObstacleWorld {
        n: usize,
    },
    /// Walks over the built-in harbor raster.
    Harbor {
        n: usize,
    },
    /// Walks over a grid file.
    DensityWalk {
        grid: PathBuf,
        #[serde(flatten)]
        walk: WalkConfig,
    },
    /// A trajectory NDJSON file, optionally resampled.
    File {
        path: PathBuf,
        #[serde(default)]
        n_points: Option<usize>,
    },
}

impl DatasetSpec {
    pub fn generate(&self, seed: Seed) -> Result<Vec<Trajectory>> {
        let rng = &mut seed.rng();
        match self {
            DatasetSpec::Junction { branches, per_branch, jitter } => gen_junction(*branches, *per_branch, *jitter, rng),
            DatasetSpec::FixedEndpoints { n } => gen_fixed_endpoints(*n, rng),
            DatasetSpec::ObstacleWorld { n } => gen_obstacle_world(*n, rng),
            DatasetSpec::Harbor { n } => gen_harbor_corpus(*n, rng),
            DatasetSpec::DensityWalk { grid, walk } => walk_from_density(&DensityGrid::load(grid)?, walk, rng),
            DatasetSpec::File { path, n_points } => {
                let ts = crate::io::load_trajectories(path)?;
                match n_points {
                    Some(n) => ts.iter().map(|t| discretize_uniform(t, *n)).collect(),
                    None => Ok(ts),
                }
            }
        }
    }
}

/// Points per generated trajectory unless stated otherwise.
pub const DEFAULT_POINTS: usize = 100;

const MAX_RETRIES: usize = 1000;

/// Resamples `t` to `n_points` points equally spaced in arc length.
/// Both endpoints are kept exactly.
pub fn discretize_uniform(t: &Trajectory, n_points: usize) -> Result<Trajectory> {
    if n_points < 2 {
        return invalid(format!("n_points must be at least 2, got {n_points}"));
    }
    let pts = t.points();
    let mut cum = Vec::with_capacity(pts.len());
    cum.push(0.0);
    for w in pts.windows(2) {
        let seg = crate::geometry::dist_sq(w[0].coords(), w[1].coords()).sqrt();
        cum.push(cum.last().unwrap() + seg);
    }
    let total = *cum.last().unwrap();
    if !(total > 0.0) {
        return invalid(format!("trajectory {:?} has zero length", t.id));
    }
    let mut out = Vec::with_capacity(n_points);
    out.push(t.first().clone());
    let mut seg = 0;
    for k in 1..n_points - 1 {
        let s = total * k as f64 / (n_points - 1) as f64;
        while seg + 2 < cum.len() && cum[seg + 1] < s {
            seg += 1;
        }
        // Zero-length segments are skipped by the loop above unless last.
        let len = cum[seg + 1] - cum[seg];
        let f = if len > 0.0 { ((s - cum[seg]) / len).clamp(0.0, 1.0) } else { 0.0 };
        let (a, b) = (pts[seg].coords(), pts[seg + 1].coords());
        out.push(Point::from_vec(a.iter().zip(b).map(|(x, y)| x + f * (y - x)).collect()));
    }
    out.push(t.last().clone());
    Trajectory::new(t.id.clone(), out)
}

fn polyline(id: String, xy: &[(f64, f64)], n_points: usize) -> Result<Trajectory> {
    discretize_uniform(&Trajectory::from_xy(id, xy)?, n_points)
}

fn seeds(rng: &mut impl Rng, n: usize) -> Vec<Seed> {
    let base = Seed(rng.random());
    (0..n as u64).map(|i| base.child(i)).collect()
}

/// Trajectories along a shared stem that split into `n_branches` branches,
/// `per_branch` each. Control points get uniform jitter in `[-jitter, jitter]`.
pub fn gen_junction(n_branches: usize, per_branch: usize, jitter: f64, rng: &mut impl Rng) -> Result<Vec<Trajectory>> {
    if n_branches < 2 {
        return invalid(format!("a junction needs at least 2 branches, got {n_branches}"));
    }
    if !(jitter >= 0.0 && jitter.is_finite()) {
        return invalid(format!("jitter must be non-negative, got {jitter}"));
    }
    let spread = PI / 2.0;
    seeds(rng, n_branches * per_branch)
        .into_par_iter()
        .enumerate()
        .map(|(i, seed)| {
            let mut rng = seed.rng();
            let b = i / per_branch.max(1);
            let angle = PI / 2.0 + spread * (b as f64 / (n_branches - 1) as f64 - 0.5);
            let mut j = || if jitter > 0.0 { rng.random_range(-jitter..=jitter) } else { 0.0 };
            let mut xy = Vec::new();
            for k in 0..=5 {
                xy.push((j(), k as f64 + j()));
            }
            for k in 1..=5 {
                let r = k as f64 * 1.2;
                xy.push((r * angle.cos() + j(), 5.0 + r * angle.sin() + j()));
            }
            polyline(format!("junction-{b}-{}", i % per_branch.max(1)), &xy, DEFAULT_POINTS)
        })
        .collect()
}

/// Paths from (0, 0) to (10, 0) that bulge through one of three lanes.
pub fn gen_fixed_endpoints(n: usize, rng: &mut impl Rng) -> Result<Vec<Trajectory>> {
    const LANES: [f64; 3] = [-3.0, 0.5, 3.5];
    seeds(rng, n)
        .into_par_iter()
        .enumerate()
        .map(|(i, seed)| {
            let mut rng = seed.rng();
            let h = LANES[i % LANES.len()] + rng.random_range(-0.4..=0.4);
            let a = rng.random_range(-0.6..=0.6);
            let mut xy: Vec<(f64, f64)> = (0..=40)
                .map(|k| {
                    let x = k as f64 / 4.0;
                    (x, h * (PI * x / 10.0).sin() + a * (2.0 * PI * x / 10.0).sin())
                })
                .collect();
            xy[0] = (0.0, 0.0);
            xy[40] = (10.0, 0.0);
            polyline(format!("loop-{i}"), &xy, DEFAULT_POINTS)
        })
        .collect()
}

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x > self.x0 && x < self.x1 && y > self.y0 && y < self.y1
    }

    fn inflate(&self, m: f64) -> Rect {
        Rect { x0: self.x0 - m, y0: self.y0 - m, x1: self.x1 + m, y1: self.y1 + m }
    }

    /// Whether segment `a`–`b` touches the closed rectangle.
    fn hits_segment(&self, a: (f64, f64), b: (f64, f64)) -> bool {
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let p = [-dx, dx, -dy, dy];
        let q = [a.0 - self.x0, self.x1 - a.0, a.1 - self.y0, self.y1 - a.1];
        let (mut t0, mut t1) = (0.0f64, 1.0f64);
        for (p, q) in p.into_iter().zip(q) {
            if p == 0.0 {
                if q < 0.0 {
                    return false;
                }
            } else if p < 0.0 {
                t0 = t0.max(q / p);
            } else {
                t1 = t1.min(q / p);
            }
        }
        t0 <= t1
    }
}

/// Obstacles of the 10 × 10 world used by `gen_obstacle_world`.
pub const OBSTACLES: [Rect; 3] = [
    Rect { x0: 3.0, y0: 3.5, x1: 4.5, y1: 7.0 },
    Rect { x0: 6.0, y0: 1.5, x1: 7.5, y1: 4.0 },
    Rect { x0: 6.0, y0: 6.0, x1: 7.5, y1: 8.5 },
];

// Free y-intervals beside the first obstacle and between the other two.
const GATES_A: [(f64, f64); 2] = [(0.5, 3.2), (7.3, 9.5)];
const GATES_B: [(f64, f64); 3] = [(0.3, 1.3), (4.2, 5.8), (8.7, 9.7)];

/// Collision-free paths across a 10 × 10 world with rectangular obstacles.
/// Each path runs from one of three start areas to one of three goal areas,
/// passing the obstacles through randomly chosen gaps; colliding candidates
/// are redrawn.
pub fn gen_obstacle_world(n: usize, rng: &mut impl Rng) -> Result<Vec<Trajectory>> {
    const SIDES: [f64; 3] = [2.0, 5.0, 8.5];
    seeds(rng, n)
        .into_par_iter()
        .enumerate()
        .map(|(i, seed)| {
            let mut rng = seed.rng();
            for _ in 0..MAX_RETRIES {
                let a = GATES_A[rng.random_range(0..GATES_A.len())];
                let b = GATES_B[rng.random_range(0..GATES_B.len())];
                let xy = [
                    (0.3, SIDES[i % 3] + rng.random_range(-0.3..=0.3)),
                    (rng.random_range(3.5..4.0), rng.random_range(a.0..a.1)),
                    (rng.random_range(6.5..7.0), rng.random_range(b.0..b.1)),
                    (9.7, SIDES[(i / 3) % 3] + rng.random_range(-0.3..=0.3)),
                ];
                let clear = xy.windows(2).all(|w| OBSTACLES.iter().all(|r| !r.inflate(0.1).hits_segment(w[0], w[1])));
                if clear {
                    return polyline(format!("obstacle-{i}"), &xy, DEFAULT_POINTS);
                }
            }
            Err(Error::Generation(format!("no collision-free path for trajectory {i} after {MAX_RETRIES} tries")))
        })
        .collect()
}

/// Non-negative densities on a `width × height` grid, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    width: usize,
    height: usize,
    cells: Vec<f64>,
}

impl DensityGrid {
    pub fn new(width: usize, height: usize, cells: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return invalid("grid dimensions must be positive");
        }
        if cells.len() != width * height {
            return invalid(format!("expected {} cells, got {}", width * height, cells.len()));
        }
        if cells.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return invalid("grid densities must be finite and non-negative");
        }
        if !cells.iter().any(|&c| c > 0.0) {
            return invalid("grid has no positive cell");
        }
        Ok(DensityGrid { width, height, cells })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    /// Density at `(x, y)`; zero outside the grid.
    pub fn get(&self, x: i64, y: i64) -> f64 {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return 0.0;
        }
        self.cells[y as usize * self.width + x as usize]
    }

    /// Parses the ASCII format (`width height` then row-major values) or an
    /// 8-bit PGM (`P2` or `P5`), whose pixels map to `value / 255`.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.starts_with(b"P5") {
            return parse_pgm_binary(bytes);
        }
        let text = std::str::from_utf8(bytes).map_err(|_| Error::Parse { line: 1, msg: "grid is not UTF-8".into() })?;
        let mut tokens = tokens(text);
        if text.trim_start().starts_with("P2") {
            tokens.next();
            let (w, h, max) = pgm_header(&mut tokens)?;
            let cells = tokens
                .map(|(line, t)| pgm_pixel(t, max, line))
                .collect::<Result<Vec<f64>>>()?;
            return DensityGrid::new(w, h, cells);
        }
        let w = next_num::<usize>(&mut tokens, "width")?;
        let h = next_num::<usize>(&mut tokens, "height")?;
        let cells = tokens
            .map(|(line, t)| t.parse::<f64>().map_err(|e| Error::Parse { line, msg: format!("{t:?}: {e}") }))
            .collect::<Result<Vec<f64>>>()?;
        DensityGrid::new(w, h, cells)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| Error::File { path: path.to_path_buf(), source })?;
        Self::parse(&bytes)
    }

    /// Writes the ASCII format.
    pub fn to_ascii(&self) -> String {
        let mut s = format!("{} {}\n", self.width, self.height);
        for row in self.cells.chunks(self.width) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }
}

fn tokens(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().flat_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("");
        l.split_whitespace().map(move |t| (i + 1, t))
    })
}

fn next_num<'a, T: std::str::FromStr>(it: &mut impl Iterator<Item = (usize, &'a str)>, what: &str) -> Result<T> {
    match it.next() {
        Some((line, t)) => t.parse().map_err(|_| Error::Parse { line, msg: format!("bad {what} {t:?}") }),
        None => Err(Error::Parse { line: 0, msg: format!("missing {what}") }),
    }
}

fn pgm_header<'a>(it: &mut impl Iterator<Item = (usize, &'a str)>) -> Result<(usize, usize, u32)> {
    let w = next_num(it, "width")?;
    let h = next_num(it, "height")?;
    let max: u32 = next_num(it, "maxval")?;
    if max == 0 || max > 255 {
        return Err(Error::Parse { line: 0, msg: format!("only 8-bit PGM is supported, maxval {max}") });
    }
    Ok((w, h, max))
}

fn pgm_pixel(t: &str, max: u32, line: usize) -> Result<f64> {
    match t.parse::<u32>() {
        Ok(v) if v <= max => Ok(v as f64 / 255.0),
        _ => Err(Error::Parse { line, msg: format!("bad pixel {t:?}") }),
    }
}

fn parse_pgm_binary(bytes: &[u8]) -> Result<DensityGrid> {
    // Header: magic, width, height, maxval, then exactly one whitespace byte.
    let mut fields = Vec::new();
    let mut i = 2;
    while fields.len() < 3 {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if start == i {
            return Err(Error::Parse { line: 1, msg: "truncated PGM header".into() });
        }
        fields.push(std::str::from_utf8(&bytes[start..i]).unwrap().parse::<usize>().unwrap_or(0));
    }
    let (w, h, max) = (fields[0], fields[1], fields[2]);
    if max == 0 || max > 255 {
        return Err(Error::Parse { line: 1, msg: format!("only 8-bit PGM is supported, maxval {max}") });
    }
    let data = bytes.get(i + 1..).unwrap_or(&[]);
    if data.len() < w * h {
        return Err(Error::Parse { line: 1, msg: format!("expected {} pixels, got {}", w * h, data.len()) });
    }
    DensityGrid::new(w, h, data[..w * h].iter().map(|&v| v as f64 / 255.0).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkConfig {
    pub n_trajectories: usize,
    pub max_steps: usize,
    /// Weight of continuing the previous heading; the other seven moves
    /// share the remainder.
    #[serde(default = "default_persistence")]
    pub direction_persistence: f64,
    #[serde(default = "default_exponent")]
    pub density_exponent: f64,
    /// Start cells `(x, y)`, used round-robin.
    pub starts: Vec<(usize, usize)>,
    #[serde(default = "default_points")]
    pub n_points: usize,
}

fn default_persistence() -> f64 {
    0.8
}

fn default_exponent() -> f64 {
    1.0
}

fn default_points() -> usize {
    DEFAULT_POINTS
}

impl WalkConfig {
    pub fn validate(&self, grid: &DensityGrid) -> Result<()> {
        if self.n_trajectories == 0 {
            return invalid("n_trajectories must be at least 1");
        }
        if self.max_steps == 0 {
            return invalid("max_steps must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.direction_persistence) {
            return invalid(format!("direction_persistence {} is outside [0, 1]", self.direction_persistence));
        }
        if !(self.density_exponent >= 0.0 && self.density_exponent.is_finite()) {
            return invalid(format!("density_exponent must be non-negative, got {}", self.density_exponent));
        }
        if self.starts.is_empty() {
            return invalid("at least one start cell is required");
        }
        for &(x, y) in &self.starts {
            if grid.get(x as i64, y as i64) <= 0.0 {
                return invalid(format!("start cell ({x}, {y}) has zero density or is outside the grid"));
            }
        }
        if self.n_points < 2 {
            return invalid("n_points must be at least 2");
        }
        Ok(())
    }
}

const MOVES: [(i64, i64); 8] = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];

/// One weighted random walk; returns visited cells.
pub fn walk_cells(grid: &DensityGrid, cfg: &WalkConfig, start: (usize, usize), rng: &mut impl Rng) -> Vec<(i64, i64)> {
    let mut cur = (start.0 as i64, start.1 as i64);
    let mut cells = vec![cur];
    let mut heading: Option<usize> = None;
    let p = cfg.direction_persistence;
    for _ in 0..cfg.max_steps {
        let mut w = [0.0; 8];
        for (k, (dx, dy)) in MOVES.iter().enumerate() {
            let d = grid.get(cur.0 + dx, cur.1 + dy);
            if d <= 0.0 {
                continue;
            }
            let turn = match heading {
                None => 1.0,
                Some(h) if h == k => p,
                Some(_) => (1.0 - p) / 7.0,
            };
            w[k] = d.powf(cfg.density_exponent) * turn;
        }
        let total: f64 = w.iter().sum();
        if !(total > 0.0) {
            break;
        }
        let mut u = rng.random::<f64>() * total;
        let mut k = 0;
        while k < 7 && (w[k] == 0.0 || u >= w[k]) {
            u -= w[k];
            k += 1;
        }
        while w[k] == 0.0 {
            k -= 1;
        }
        cur = (cur.0 + MOVES[k].0, cur.1 + MOVES[k].1);
        heading = Some(k);
        cells.push(cur);
    }
    cells
}

/// Weighted random walks over `grid`, output in grid coordinates and
/// resampled to `cfg.n_points` points.
pub fn walk_from_density(grid: &DensityGrid, cfg: &WalkConfig, rng: &mut impl Rng) -> Result<Vec<Trajectory>> {
    cfg.validate(grid)?;
    seeds(rng, cfg.n_trajectories)
        .into_par_iter()
        .enumerate()
        .map(|(i, seed)| {
            let start = cfg.starts[i % cfg.starts.len()];
            let cells = walk_cells(grid, cfg, start, &mut seed.rng());
            if cells.len() < 2 {
                return Err(Error::Generation(format!("walk {i} from {start:?} could not move")));
            }
            let xy: Vec<(f64, f64)> = cells.iter().map(|&(x, y)| (x as f64, y as f64)).collect();
            polyline(format!("walk-{i}"), &xy, cfg.n_points)
        })
        .collect()
}

/// A harbor-like density raster: land along the bottom edge cut by an
/// entrance channel, faint open sea, and dense shipping lanes fanning out
/// from the entrance. Returns the grid and the lane end cells as starts.
pub fn harbor_grid(width: usize, height: usize) -> Result<(DensityGrid, Vec<(usize, usize)>)> {
    if width < 20 || height < 20 {
        return invalid("harbor grid needs at least 20 × 20 cells");
    }
    let (w, h) = (width as f64, height as f64);
    let coast = (h * 0.2).round();
    let mouth = (w / 2.0, coast);
    let ends = [
        (w * 0.08, h - 2.0),
        (w * 0.5, h - 2.0),
        (w * 0.92, h - 2.0),
        (w - 2.0, h * 0.5),
        (1.0, h * 0.55),
    ];
    let lane = |x: f64, y: f64| -> f64 {
        ends.iter()
            .map(|&(ex, ey)| {
                let (vx, vy) = (ex - mouth.0, ey - mouth.1);
                let t = (((x - mouth.0) * vx + (y - mouth.1) * vy) / (vx * vx + vy * vy)).clamp(0.0, 1.0);
                let (px, py) = (mouth.0 + t * vx - x, mouth.1 + t * vy - y);
                (-(px * px + py * py) / 2.0).exp()
            })
            .fold(0.0, f64::max)
    };
    let mut cells = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            let (fx, fy) = (x as f64, y as f64);
            let channel = (fx - mouth.0).abs() <= 1.5;
            cells[y * width + x] = if fy < coast {
                if channel { 1.0 } else { 0.0 }
            } else {
                0.02 + lane(fx, fy)
            };
        }
    }
    let mut starts = vec![(mouth.0 as usize, 1)];
    starts.extend(ends.iter().map(|&(x, y)| (x.round() as usize, y.round() as usize)));
    Ok((DensityGrid::new(width, height, cells)?, starts))
}

/// The 194-trajectory harbor corpus on a 60 × 40 raster.
pub fn gen_harbor_corpus(n: usize, rng: &mut impl Rng) -> Result<Vec<Trajectory>> {
    let (grid, starts) = harbor_grid(60, 40)?;
    let cfg = WalkConfig {
        n_trajectories: n,
        max_steps: 60,
        direction_persistence: default_persistence(),
        density_exponent: default_exponent(),
        starts,
        n_points: DEFAULT_POINTS,
    };
    walk_from_density(&grid, &cfg, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filtration::ClusterTree;
    use crate::geometry::{distance_matrix, frechet_distance};

    fn spacing(t: &Trajectory) -> Vec<f64> {
        t.points().windows(2).map(|w| crate::geometry::dist_sq(w[0].coords(), w[1].coords()).sqrt()).collect()
    }

    #[test]
    fn discretize_examples() {
        let t = Trajectory::from_xy("s", &[(0.0, 0.0), (2.0, 0.0)]).unwrap();
        let d = discretize_uniform(&t, 3).unwrap();
        assert_eq!(d.points()[1], Point::xy(1.0, 0.0));
        let again = discretize_uniform(&d, 3).unwrap();
        for (a, b) in again.points().iter().zip(d.points()) {
            assert!(crate::geometry::dist_sq(a.coords(), b.coords()).sqrt() < 1e-9);
        }
        let z = Trajectory::from_xy("z", &[(1.0, 1.0), (1.0, 1.0)]).unwrap();
        assert!(discretize_uniform(&z, 5).is_err());
        assert!(discretize_uniform(&t, 1).is_err());
    }

    #[test]
    fn discretize_spacing_and_length() {
        let xy: Vec<(f64, f64)> = (0..=500).map(|k| {
            let a = k as f64 / 500.0 * PI;
            (a.cos(), a.sin())
        }).collect();
        let t = Trajectory::from_xy("arc", &xy).unwrap();
        let d = discretize_uniform(&t, 100).unwrap();
        assert_eq!(d.first(), t.first());
        assert_eq!(d.last(), t.last());
        assert!((d.arc_length() - t.arc_length()).abs() / t.arc_length() < 0.01);
        // Equal spacing holds along the source polyline; chords across a
        // vertex are slightly shorter, so check a polyline with no bends.
        let line = Trajectory::from_xy("l", &[(0.0, 0.0), (0.3, 0.4), (0.9, 1.2), (3.0, 4.0)]).unwrap();
        let s = spacing(&discretize_uniform(&line, 37).unwrap());
        for x in &s {
            assert!((x - s[0]).abs() <= 1e-9 * s[0]);
        }
    }

    #[test]
    fn junction_shapes() {
        let ts = gen_junction(2, 7, 0.0, &mut Seed(1).rng()).unwrap();
        assert_eq!(ts.len(), 14);
        for b in 0..2 {
            for i in 0..7 {
                assert_eq!(frechet_distance(&ts[b * 7], &ts[b * 7 + i]).unwrap(), 0.0);
            }
        }
        assert!(gen_junction(1, 7, 0.0, &mut Seed(1).rng()).is_err());
    }

    #[test]
    fn junction_merges_within_branches_first() {
        let ts = gen_junction(3, 5, 0.05, &mut Seed(2).rng()).unwrap();
        let d = distance_matrix(&ts).unwrap();
        let tree = ClusterTree::single_linkage(&d, ts.iter().map(|t| t.id.clone()).collect()).unwrap();
        for node in tree.nodes() {
            let branches: std::collections::BTreeSet<usize> = node.members.iter().map(|m| m / 5).collect();
            if node.members.len() <= 5 {
                assert_eq!(branches.len(), 1, "mixed cluster {:?}", node.members);
            }
        }
        let heights = tree.merge_heights();
        assert!(heights.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn fixed_endpoints_share_ends() {
        let ts = gen_fixed_endpoints(13, &mut Seed(3).rng()).unwrap();
        assert_eq!(ts.len(), 13);
        for t in &ts {
            assert_eq!(t.first(), ts[0].first());
            assert_eq!(t.last(), ts[0].last());
            assert_eq!(t.len(), DEFAULT_POINTS);
        }
        assert_eq!(ts, gen_fixed_endpoints(13, &mut Seed(3).rng()).unwrap());
    }

    #[test]
    fn obstacle_world_is_clear_and_deterministic() {
        let ts = gen_obstacle_world(33, &mut Seed(4).rng()).unwrap();
        assert_eq!(ts.len(), 33);
        for t in &ts {
            for p in t.points() {
                let [x, y] = [p.coords()[0], p.coords()[1]];
                assert!(OBSTACLES.iter().all(|r| !r.contains(x, y)), "{} enters an obstacle at ({x}, {y})", t.id);
            }
        }
        assert_eq!(ts, gen_obstacle_world(33, &mut Seed(4).rng()).unwrap());
    }

    #[test]
    fn segment_rect_intersection() {
        let r = Rect { x0: 1.0, y0: 1.0, x1: 2.0, y1: 2.0 };
        assert!(r.hits_segment((0.0, 0.0), (3.0, 3.0)));
        assert!(r.hits_segment((1.5, 0.0), (1.5, 3.0)));
        assert!(!r.hits_segment((0.0, 0.0), (3.0, 0.5)));
        assert!(!r.hits_segment((0.0, 3.0), (3.0, 2.5)));
        assert!(r.hits_segment((1.2, 1.2), (1.3, 1.3)));
    }

    fn grid_from(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> DensityGrid {
        let cells = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        DensityGrid::new(w, h, cells).unwrap()
    }

    fn walk_cfg(n: usize, p: f64, starts: Vec<(usize, usize)>) -> WalkConfig {
        WalkConfig { n_trajectories: n, max_steps: 40, direction_persistence: p, density_exponent: 1.0, starts, n_points: 20 }
    }

    #[test]
    fn persistent_walks_are_straight() {
        let g = grid_from(30, 30, |_, _| 1.0);
        let cfg = walk_cfg(1, 1.0, vec![(15, 15)]);
        let mut rng = Seed(5).rng();
        for _ in 0..20 {
            let cells = walk_cells(&g, &cfg, (15, 15), &mut rng);
            assert!(cells.len() > 2);
            let step = (cells[1].0 - cells[0].0, cells[1].1 - cells[0].1);
            for w in cells.windows(2) {
                assert_eq!((w[1].0 - w[0].0, w[1].1 - w[0].1), step);
            }
        }
    }

    #[test]
    fn walks_stay_in_corridor() {
        let g = grid_from(30, 5, |_, y| if y == 2 { 1.0 } else { 0.0 });
        let ts = walk_from_density(&g, &walk_cfg(20, 0.8, vec![(10, 2)]), &mut Seed(6).rng()).unwrap();
        for t in &ts {
            assert!(t.points().iter().all(|p| p.coords()[1] == 2.0));
        }
    }

    #[test]
    fn walks_prefer_dense_corridor() {
        let g = grid_from(30, 3, |x, y| match (x, y) {
            (_, 2) => 0.9,
            (_, 0) => 0.1,
            (0, 1) => 1.0,
            _ => 0.0,
        });
        let cfg = walk_cfg(1, 0.8, vec![(0, 1)]);
        let mut rng = Seed(7).rng();
        let dense = (0..200).filter(|_| walk_cells(&g, &cfg, (0, 1), &mut rng).last().unwrap().1 == 2).count();
        assert!(dense >= 160, "{dense} of 200 walks took the dense corridor");
    }

    #[test]
    fn walk_errors() {
        let g = grid_from(5, 5, |x, _| if x == 0 { 0.0 } else { 1.0 });
        assert!(walk_from_density(&g, &walk_cfg(3, 0.8, vec![(0, 0)]), &mut Seed(8).rng()).is_err());
        assert!(walk_from_density(&g, &walk_cfg(0, 0.8, vec![(1, 1)]), &mut Seed(8).rng()).is_err());
        assert!(DensityGrid::new(2, 2, vec![0.0; 4]).is_err());
        assert!(DensityGrid::new(2, 2, vec![1.0, -1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn grid_formats() {
        let g = DensityGrid::parse(b"3 2\n0 0.5 1\n1 1 0\n").unwrap();
        assert_eq!((g.width(), g.height()), (3, 2));
        assert_eq!(g.get(1, 0), 0.5);
        assert_eq!(g.get(2, 1), 0.0);
        assert_eq!(DensityGrid::parse(g.to_ascii().as_bytes()).unwrap(), g);
        let p2 = DensityGrid::parse(b"P2\n# comment\n2 1\n255\n0 255\n").unwrap();
        assert_eq!(p2.cells(), &[0.0, 1.0]);
        let mut p5 = b"P5\n2 2\n255\n".to_vec();
        p5.extend([0u8, 51, 255, 0]);
        let g5 = DensityGrid::parse(&p5).unwrap();
        assert_eq!(g5.cells(), &[0.0, 0.2, 1.0, 0.0]);
        assert!(DensityGrid::parse(b"2 2\n1 2 3\n").is_err());
        assert!(DensityGrid::parse(b"P2\n1 1\n65535\n3\n").is_err());
    }

    #[test]
    fn harbor_corpus() {
        let a = gen_harbor_corpus(30, &mut Seed(9).rng()).unwrap();
        assert_eq!(a.len(), 30);
        assert_eq!(a, gen_harbor_corpus(30, &mut Seed(9).rng()).unwrap());
        let (grid, _) = harbor_grid(60, 40).unwrap();
        for t in &a {
            for p in t.points() {
                let (x, y) = (p.coords()[0], p.coords()[1]);
                assert!(x >= 0.0 && y >= 0.0 && x <= 59.0 && y <= 39.0);
            }
            // Vertices of the walk are visited cells, so they have density.
            assert!(grid.get(t.first().coords()[0] as i64, t.first().coords()[1] as i64) > 0.0);
        }
    }
}

//! Particle primitives shared by the filter stack and the flat baselines.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::filtration::NodeId;
use crate::geometry::{dist_sq, Point};

/// Additive offset inside the bounded log-likelihood.
pub const LOG_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub position: Point,
    pub class: NodeId,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleScheme {
    #[default]
    Multinomial,
    Systematic,
}

/// One mixture component of the initial distribution over (class, position).
#[derive(Debug, Clone, PartialEq)]
pub struct PriorComponent {
    pub class: NodeId,
    pub weight: f64,
    pub position: Point,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prior {
    components: Vec<PriorComponent>,
}

impl Prior {
    pub fn new(components: Vec<PriorComponent>) -> Result<Self> {
        if components.is_empty() {
            return invalid("prior has no components");
        }
        if components.iter().any(|c| !(c.weight >= 0.0 && c.weight.is_finite())) {
            return invalid("prior weights must be finite and non-negative");
        }
        if components.iter().map(|c| c.weight).sum::<f64>() <= 0.0 {
            return invalid("prior has zero total mass");
        }
        Ok(Prior { components })
    }

    /// Equal mass on every `(class, start position)` pair.
    pub fn uniform(starts: impl IntoIterator<Item = (NodeId, Point)>) -> Result<Self> {
        Self::new(
            starts
                .into_iter()
                .map(|(class, position)| PriorComponent { class, weight: 1.0, position })
                .collect(),
        )
    }

    pub fn components(&self) -> &[PriorComponent] {
        &self.components
    }

    /// The same mixture with every component relabelled to `class`.
    pub fn relabel(&self, class: NodeId) -> Prior {
        Prior {
            components: self
                .components
                .iter()
                .map(|c| PriorComponent { class, ..c.clone() })
                .collect(),
        }
    }

    /// `n` equally weighted draws.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Vec<Particle> {
        let weights: Vec<f64> = self.components.iter().map(|c| c.weight).collect();
        let cdf = cumulative(&weights);
        (0..n)
            .map(|_| {
                let c = &self.components[draw(&cdf, rng)];
                Particle { position: c.position.clone(), class: c.class, weight: 1.0 / n as f64 }
            })
            .collect()
    }
}

/// Running sums of `weights`.
pub fn cumulative(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

/// Index drawn proportionally to the increments of `cdf`.
pub fn draw(cdf: &[f64], rng: &mut impl Rng) -> usize {
    let total = *cdf.last().expect("non-empty cdf");
    let u: f64 = rng.random::<f64>() * total;
    locate(cdf, u)
}

fn locate(cdf: &[f64], u: f64) -> usize {
    // First index with cdf > u, skipping zero-width bins.
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

/// Bounded, non-negative form of `-log(distance)`: monotone decreasing in
/// `d`, finite at 0, and strictly positive up to `d_max`.
#[inline]
pub fn bounded_log_weight(d: f64, d_max: f64) -> f64 {
    -((d + LOG_EPS) / (d_max + 2.0 * LOG_EPS)).ln()
}

/// Multiplies each particle weight by its fine-observation likelihood.
pub fn apply_fine_likelihood(particles: &mut [Particle], obs: &Point) -> Result<()> {
    if let Some(p) = particles.iter().find(|p| p.position.dim() != obs.dim()) {
        return invalid(format!(
            "fine observation has dimension {}, particles have {}",
            obs.dim(),
            p.position.dim()
        ));
    }
    let dists: Vec<f64> = particles
        .iter()
        .map(|p| dist_sq(p.position.coords(), obs.coords()).sqrt())
        .collect();
    let d_max = dists.iter().copied().fold(0.0, f64::max);
    for (p, d) in particles.iter_mut().zip(dists) {
        p.weight *= bounded_log_weight(d, d_max);
    }
    Ok(())
}

/// Scales weights to sum to one. Returns `false` (and resets to uniform)
/// when the total is zero or not finite.
pub fn normalize(particles: &mut [Particle]) -> bool {
    let total: f64 = particles.iter().map(|p| p.weight).sum();
    if total > 0.0 && total.is_finite() {
        for p in particles.iter_mut() {
            p.weight /= total;
        }
        true
    } else {
        let u = 1.0 / particles.len() as f64;
        for p in particles.iter_mut() {
            p.weight = u;
        }
        false
    }
}

/// Per-class mass over `particles` (classes indexed by `NodeId.0`) and the total.
pub fn class_masses(particles: &[Particle], n_classes: usize) -> (Vec<f64>, f64) {
    let mut mass = vec![0.0; n_classes];
    let mut total = 0.0;
    for p in particles {
        mass[p.class.0] += p.weight;
        total += p.weight;
    }
    (mass, total)
}

/// Weighted mean position.
pub fn weighted_mean(particles: &[Particle]) -> Point {
    let dim = particles[0].position.dim();
    let mut acc = vec![0.0; dim];
    let mut total = 0.0;
    for p in particles {
        total += p.weight;
        for (a, x) in acc.iter_mut().zip(p.position.coords()) {
            *a += p.weight * x;
        }
    }
    if total > 0.0 {
        acc.iter_mut().for_each(|a| *a /= total);
    } else {
        let n = particles.len() as f64;
        acc = vec![0.0; dim];
        for p in particles {
            for (a, x) in acc.iter_mut().zip(p.position.coords()) {
                *a += x / n;
            }
        }
    }
    Point::from_vec(acc)
}

/// Draws `round(n (1 - v))` particles by weight and re-labels `n - kept`
/// uniformly chosen particles with uniformly random classes from `classes`.
/// All output weights are `1/n`.
pub fn resample(
    particles: &[Particle],
    classes: &[NodeId],
    depletion: f64,
    scheme: ResampleScheme,
    rng: &mut impl Rng,
) -> Vec<Particle> {
    let n = particles.len();
    let kept = (n as f64 * (1.0 - depletion)).round() as usize;
    let weights: Vec<f64> = particles.iter().map(|p| p.weight).collect();
    let cdf = cumulative(&weights);
    let total = *cdf.last().expect("non-empty particle set");
    let mut out = Vec::with_capacity(n);
    match scheme {
        ResampleScheme::Multinomial => {
            for _ in 0..kept {
                out.push(particles[draw(&cdf, rng)].clone());
            }
        }
        ResampleScheme::Systematic => {
            if kept > 0 {
                let step = total / kept as f64;
                let start: f64 = rng.random::<f64>() * step;
                for k in 0..kept {
                    out.push(particles[locate(&cdf, start + k as f64 * step)].clone());
                }
            }
        }
    }
    for _ in kept..n {
        let src = &particles[rng.random_range(0..n)];
        let class = classes[rng.random_range(0..classes.len())];
        out.push(Particle { position: src.position.clone(), class, weight: 0.0 });
    }
    let w = 1.0 / n as f64;
    for p in &mut out {
        p.weight = w;
    }
    out
}

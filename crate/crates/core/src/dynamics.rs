//! Localized per-class dynamics.
//!
//! A class's motion model is the inverse-distance-weighted average of the
//! velocities sampled along its member trajectories, restricted to an
//! ε-ball around the query point, plus a noise term scaled by the class's
//! mean sample speed.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::filtration::{ClusterTree, NodeId};
use crate::geometry::{Point, Trajectory};
use crate::kdtree::KdTree;

/// Shape of the per-coordinate dynamics/observation noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Uniform on `[0, scale]`.
    #[default]
    OneSided,
    /// Uniform on `[-scale/2, scale/2]`.
    Centered,
}

impl NoiseMode {
    #[inline]
    pub fn draw(self, scale: f64, rng: &mut impl Rng) -> f64 {
        let u: f64 = rng.random();
        match self {
            NoiseMode::OneSided => u * scale,
            NoiseMode::Centered => (u - 0.5) * scale,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicsConfig {
    pub kappa: f64,
    /// Lower bound on ε; leaves are born at 0 and would otherwise get an
    /// empty ball.
    pub epsilon_floor: f64,
    /// Overrides the per-class ε = birth rule with one radius for all classes.
    #[serde(default)]
    pub global_epsilon: Option<f64>,
    #[serde(default)]
    pub noise: NoiseMode,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig { kappa: 0.3, epsilon_floor: 0.1, global_epsilon: None, noise: NoiseMode::OneSided }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalVelocity {
    pub velocity: Vec<f64>,
    /// No sample inside the ε-ball; the nearest sample's velocity was used.
    pub extrapolated: bool,
}

#[derive(Debug, Clone)]
pub struct ClassDynamics {
    class: NodeId,
    dim: usize,
    index: KdTree,
    velocities: Vec<f64>,
    epsilon: f64,
    kappa: f64,
    speed_scale: f64,
    noise: NoiseMode,
}

impl ClassDynamics {
    /// Builds a model from `(position, velocity)` samples.
    pub fn from_samples(
        class: NodeId,
        samples: &[(Point, Vec<f64>)],
        epsilon: f64,
        kappa: f64,
        noise: NoiseMode,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyClass(class.0));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return invalid(format!("epsilon must be positive, got {epsilon}"));
        }
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return invalid(format!("kappa must be non-negative, got {kappa}"));
        }
        let dim = samples[0].0.dim();
        let mut coords = Vec::with_capacity(samples.len() * dim);
        let mut velocities = Vec::with_capacity(samples.len() * dim);
        let mut speed_sum = 0.0;
        for (p, v) in samples {
            if p.dim() != dim || v.len() != dim {
                return invalid(format!("class {class}: mixed sample dimensions"));
            }
            coords.extend_from_slice(p.coords());
            velocities.extend_from_slice(v);
            speed_sum += v.iter().map(|x| x * x).sum::<f64>().sqrt();
        }
        Ok(ClassDynamics {
            class,
            dim,
            index: KdTree::new(dim, coords),
            velocities,
            epsilon,
            kappa,
            speed_scale: speed_sum / samples.len() as f64,
            noise,
        })
    }

    pub fn class(&self) -> NodeId {
        self.class
    }

    /// The same model attributed to another class id.
    pub fn relabel(&self, class: NodeId) -> ClassDynamics {
        ClassDynamics { class, ..self.clone() }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Mean sample speed; the reference scale for κ.
    pub fn speed_scale(&self) -> f64 {
        self.speed_scale
    }

    pub fn sample_count(&self) -> usize {
        self.index.len()
    }

    fn velocity(&self, i: usize) -> &[f64] {
        &self.velocities[i * self.dim..(i + 1) * self.dim]
    }

    /// Normalized inverse-distance weights of the samples in the ε-ball.
    /// Empty when the ball is empty or `z` coincides with a sample.
    pub fn ball_weights(&self, z: &[f64]) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        let mut coincident = false;
        self.index.within(z, self.epsilon, |i, d2| {
            if d2 == 0.0 {
                coincident = true;
            } else {
                out.push((i, 1.0 / d2.sqrt()));
            }
        });
        if coincident {
            return Vec::new();
        }
        let total: f64 = out.iter().map(|(_, w)| w).sum();
        for (_, w) in &mut out {
            *w /= total;
        }
        out
    }

    pub fn local_velocity(&self, z: &[f64]) -> LocalVelocity {
        let dim = self.dim;
        let mut acc = vec![0.0; dim];
        let mut coincident = vec![0.0; dim];
        let mut n_coincident = 0usize;
        let mut total = 0.0;
        self.index.within(z, self.epsilon, |i, d2| {
            let v = &self.velocities[i * dim..(i + 1) * dim];
            if d2 == 0.0 {
                n_coincident += 1;
                for (c, x) in coincident.iter_mut().zip(v) {
                    *c += x;
                }
            } else {
                let w = 1.0 / d2.sqrt();
                total += w;
                for (a, x) in acc.iter_mut().zip(v) {
                    *a += w * x;
                }
            }
        });
        if n_coincident > 0 {
            let k = n_coincident as f64;
            coincident.iter_mut().for_each(|c| *c /= k);
            return LocalVelocity { velocity: coincident, extrapolated: false };
        }
        if total > 0.0 {
            acc.iter_mut().for_each(|a| *a /= total);
            return LocalVelocity { velocity: acc, extrapolated: false };
        }
        let (i, _) = self.index.nearest(z).expect("class has samples");
        LocalVelocity { velocity: self.velocity(i).to_vec(), extrapolated: true }
    }

    /// One draw of `z + local_velocity(z) + noise`. The flag reports an
    /// extrapolated step.
    pub fn step_sample(&self, z: &Point, rng: &mut impl Rng) -> (Point, bool) {
        let lv = self.local_velocity(z.coords());
        let scale = self.kappa * self.speed_scale;
        let coords = z
            .coords()
            .iter()
            .zip(&lv.velocity)
            .map(|(x, v)| x + v + self.noise.draw(scale, rng))
            .collect();
        (Point::from_vec(coords), lv.extrapolated)
    }
}

/// `(position, velocity)` samples of a trajectory: one per point except the last.
pub fn trajectory_samples(t: &Trajectory) -> impl Iterator<Item = (Point, Vec<f64>)> + '_ {
    t.points().windows(2).map(|w| {
        let v = w[1].coords().iter().zip(w[0].coords()).map(|(b, a)| b - a).collect();
        (w[0].clone(), v)
    })
}

/// One model per tree node, indexed by node id. `trajectories[i]` must be
/// leaf `i` of `tree`.
pub fn build_dynamics(
    tree: &ClusterTree,
    trajectories: &[Trajectory],
    cfg: &DynamicsConfig,
) -> Result<Vec<ClassDynamics>> {
    if trajectories.len() != tree.leaf_count() {
        return invalid(format!(
            "{} trajectories for a tree with {} leaves",
            trajectories.len(),
            tree.leaf_count()
        ));
    }
    for (i, t) in trajectories.iter().enumerate() {
        if t.id != tree.label(i) {
            return invalid(format!("trajectory {i} is {:?} but leaf {i} is {:?}", t.id, tree.label(i)));
        }
    }
    if !(cfg.epsilon_floor > 0.0) {
        return invalid("epsilon_floor must be positive");
    }
    let per_leaf: Vec<Vec<(Point, Vec<f64>)>> =
        trajectories.iter().map(|t| trajectory_samples(t).collect()).collect();
    tree.nodes()
        .iter()
        .map(|node| {
            let samples: Vec<(Point, Vec<f64>)> =
                node.members.iter().flat_map(|&m| per_leaf[m].iter().cloned()).collect();
            let eps = cfg.global_epsilon.unwrap_or(node.birth.max(cfg.epsilon_floor));
            ClassDynamics::from_samples(node.id, &samples, eps, cfg.kappa, cfg.noise)
        })
        .collect()
}

//! The filter stack: one particle set per tree node, kept consistent with a
//! class-probability assignment over the whole tree.
//!
//! Leaf particles (`X_0`) are the primary state. Every internal node's
//! particles are relabelled copies of its children's, so each level of the
//! tree holds exactly `N` particles. Class probabilities satisfy, at all
//! times, per-level normalization and parent additivity, and for every node
//! the weights of its particles sum to its probability.

mod particles;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use particles::{
    apply_fine_likelihood, bounded_log_weight, class_masses, normalize, resample, weighted_mean,
    Particle, Prior, PriorComponent, ResampleScheme, LOG_EPS,
};

use crate::dynamics::ClassDynamics;
use crate::error::{invalid, Result};
use crate::filtration::{ClusterTree, NodeId};
use crate::geometry::Point;
use crate::seed::{Rng, Seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observation {
    Fine { position: Point },
    Coarse { class: NodeId, level: f64 },
}

impl Observation {
    pub fn is_fine(&self) -> bool {
        matches!(self, Observation::Fine { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// Particles per level.
    pub n_particles: usize,
    /// Fraction of leaf particles re-labelled at random after each resample.
    pub depletion: f64,
    #[serde(default)]
    pub resample: ResampleScheme,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig { n_particles: 100, depletion: 0.01, resample: ResampleScheme::Multinomial }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 {
            return invalid("n_particles must be at least 1");
        }
        if !(0.0..1.0).contains(&self.depletion) {
            return invalid(format!("depletion must be in [0, 1), got {}", self.depletion));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Predict moves whose ε-ball was empty.
    pub extrapolated: u64,
    /// Updates whose weight vector collapsed to zero and was reset.
    pub weight_resets: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProb {
    pub id: NodeId,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSnapshot {
    pub b: f64,
    pub classes: Vec<ClassProb>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapClass {
    pub b: f64,
    pub class: NodeId,
}

/// Per-step export of the stack's state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: u64,
    pub levels: Vec<LevelSnapshot>,
    pub point_estimate: Point,
    pub map_class: Vec<MapClass>,
}

#[derive(Debug, Clone)]
pub struct FilterStack<'a> {
    tree: &'a ClusterTree,
    dynamics: &'a [ClassDynamics],
    cfg: FilterConfig,
    seed: Seed,
    t: u64,
    leaf: Vec<Particle>,
    upper: Vec<Vec<Particle>>,
    probs: Vec<f64>,
    prev_probs: Vec<f64>,
    leaf_ids: Vec<NodeId>,
    diagnostics: Diagnostics,
}

impl<'a> FilterStack<'a> {
    /// Samples `N` leaf particles from `prior`, derives class probabilities
    /// and realizes every parent level.
    pub fn init(
        tree: &'a ClusterTree,
        dynamics: &'a [ClassDynamics],
        prior: &Prior,
        cfg: FilterConfig,
        seed: Seed,
    ) -> Result<Self> {
        cfg.validate()?;
        if dynamics.len() != tree.len() {
            return invalid(format!("{} dynamics models for {} tree nodes", dynamics.len(), tree.len()));
        }
        for c in prior.components() {
            if c.class.0 >= tree.len() || !tree.is_leaf(c.class) {
                return invalid(format!("prior assigns mass to non-leaf class {}", c.class));
            }
        }
        let leaf = prior.sample(cfg.n_particles, &mut seed.named("init").rng());
        let mut stack = FilterStack {
            tree,
            dynamics,
            cfg,
            seed,
            t: 0,
            leaf,
            upper: vec![Vec::new(); tree.len()],
            probs: vec![0.0; tree.len()],
            prev_probs: vec![0.0; tree.len()],
            leaf_ids: tree.leaves().collect(),
            diagnostics: Diagnostics::default(),
        };
        stack.rebuild_leaves();
        stack.propagate_up();
        Ok(stack)
    }

    pub fn tree(&self) -> &'a ClusterTree {
        self.tree
    }

    pub fn config(&self) -> &FilterConfig {
        &self.cfg
    }

    pub fn time(&self) -> u64 {
        self.t
    }

    pub fn diagnostics(&self) -> Diagnostics {
        self.diagnostics
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, c: NodeId) -> f64 {
        self.probs[c.0]
    }

    pub fn prev_probs(&self) -> &[f64] {
        &self.prev_probs
    }

    /// Leaf-level particle set `X_0`.
    pub fn leaf_particles(&self) -> &[Particle] {
        &self.leaf
    }

    /// Realized particles of one node.
    pub fn particles_of(&self, c: NodeId) -> Vec<&Particle> {
        if self.tree.is_leaf(c) {
            self.leaf.iter().filter(|p| p.class == c).collect()
        } else {
            self.upper[c.0].iter().collect()
        }
    }

    /// Number of realized particles over the level `C_b`.
    pub fn level_particle_count(&self, b: f64) -> usize {
        self.tree.alive_at(b).into_iter().map(|c| self.particles_of(c).len()).sum()
    }

    /// Tree probability rebuild from a level `level` (any set of nodes that
    /// partitions the leaves): probabilities at the level come from particle
    /// weights, descend by proportional scaling and ascend by summation.
    /// `prev_probs` receives the probabilities before the rebuild.
    pub fn rebuild_tree(&mut self, level: &[NodeId]) {
        let n = self.tree.len();
        let mut in_level = vec![false; n];
        for &c in level {
            in_level[c.0] = true;
        }
        let mut mass = vec![0.0; n];
        let mut total = 0.0;
        for p in &self.leaf {
            if in_level[p.class.0] {
                mass[p.class.0] += p.weight;
                total += p.weight;
            }
        }
        for &c in level {
            if !self.tree.is_leaf(c) {
                for p in &self.upper[c.0] {
                    mass[c.0] += p.weight;
                    total += p.weight;
                }
            }
        }
        if !(total > 0.0 && total.is_finite()) {
            self.diagnostics.weight_resets += 1;
            self.reset_level_weights(level);
            return self.rebuild_tree(level);
        }
        self.prev_probs.clone_from(&self.probs);
        let prev = &self.prev_probs;
        let mut covered = vec![false; n];
        for &c in level {
            self.probs[c.0] = mass[c.0] / total;
            covered[c.0] = true;
            let mut stack = vec![c];
            while let Some(x) = stack.pop() {
                let children = &self.tree.node(x).children;
                for &ch in children {
                    self.probs[ch.0] = if prev[x.0] > 0.0 {
                        prev[ch.0] * self.probs[x.0] / prev[x.0]
                    } else {
                        self.probs[x.0] / children.len() as f64
                    };
                    covered[ch.0] = true;
                    stack.push(ch);
                }
            }
        }
        for id in self.tree.internal_ids() {
            if !covered[id.0] {
                self.probs[id.0] =
                    self.tree.node(id).children.iter().map(|ch| self.probs[ch.0]).sum();
            }
        }
    }

    fn rebuild_leaves(&mut self) {
        let leaves = self.leaf_ids.clone();
        self.rebuild_tree(&leaves);
    }

    fn reset_level_weights(&mut self, level: &[NodeId]) {
        let mut in_level = vec![false; self.tree.len()];
        for &c in level {
            in_level[c.0] = true;
        }
        let count = self.leaf.iter().filter(|p| in_level[p.class.0]).count()
            + level.iter().filter(|c| !self.tree.is_leaf(**c)).map(|c| self.upper[c.0].len()).sum::<usize>();
        let u = 1.0 / count.max(1) as f64;
        for p in self.leaf.iter_mut().filter(|p| in_level[p.class.0]) {
            p.weight = u;
        }
        for &c in level {
            if !self.tree.is_leaf(c) {
                self.upper[c.0].iter_mut().for_each(|p| p.weight = u);
            }
        }
    }

    /// Realizes every internal node's particle set as relabelled copies of
    /// its children's particles, bottom-up.
    pub fn propagate_up(&mut self) {
        let m = self.tree.leaf_count();
        let mut by_leaf: Vec<Vec<Particle>> = vec![Vec::new(); m];
        for p in &self.leaf {
            by_leaf[p.class.0].push(p.clone());
        }
        for id in self.tree.internal_ids() {
            let mut set = Vec::new();
            for &ch in &self.tree.node(id).children {
                let src = if ch.0 < m { &by_leaf[ch.0] } else { &self.upper[ch.0] };
                set.extend(src.iter().map(|p| Particle { class: id, ..p.clone() }));
            }
            self.upper[id.0] = set;
        }
    }

    /// Moves every particle at every level with its own class's dynamics.
    pub fn predict(&mut self) {
        let step_seed = self.seed.child(self.t).named("predict");
        let dynamics = self.dynamics;
        let mut rng = step_seed.named("leaf").rng();
        let mut extrapolated = predict_particles(&mut self.leaf, dynamics, &mut rng);
        extrapolated += self
            .upper
            .par_iter_mut()
            .enumerate()
            .filter(|(_, ps)| !ps.is_empty())
            .map(|(id, ps)| predict_particles(ps, dynamics, &mut step_seed.child(id as u64).rng()))
            .sum::<u64>();
        self.diagnostics.extrapolated += extrapolated;
    }

    /// Observation update.
    pub fn update(&mut self, obs: &Observation) -> Result<()> {
        match obs {
            Observation::Fine { position } => {
                apply_fine_likelihood(&mut self.leaf, position)?;
                if !normalize(&mut self.leaf) {
                    self.diagnostics.weight_resets += 1;
                }
                let leaves = self.leaf_ids.clone();
                self.rebuild_tree(&leaves);
                self.rescale_outside(&leaves);
            }
            Observation::Coarse { class, level } => {
                let xi = *class;
                self.tree.get(xi)?;
                if !self.tree.node(xi).alive_at(*level) {
                    return invalid(format!("coarse class {xi} is not alive at level {level}"));
                }
                let alive = self.tree.alive_at(*level);
                let dists = alive
                    .iter()
                    .map(|&c| self.tree.tree_class_distance(c, xi))
                    .collect::<Result<Vec<f64>>>()?;
                let d_max = dists.iter().copied().fold(0.0, f64::max);
                let mut lik = vec![None; self.tree.len()];
                for (&c, &d) in alive.iter().zip(&dists) {
                    lik[c.0] = Some(bounded_log_weight(d, d_max));
                }
                let mut total = 0.0;
                for p in self.leaf.iter_mut() {
                    if let Some(l) = lik[p.class.0] {
                        p.weight *= l;
                        total += p.weight;
                    }
                }
                for &c in &alive {
                    if !self.tree.is_leaf(c) {
                        let l = lik[c.0].expect("alive class has a likelihood");
                        for p in self.upper[c.0].iter_mut() {
                            p.weight *= l;
                            total += p.weight;
                        }
                    }
                }
                if total > 0.0 && total.is_finite() {
                    for p in self.leaf.iter_mut().filter(|p| lik[p.class.0].is_some()) {
                        p.weight /= total;
                    }
                    for &c in &alive {
                        if !self.tree.is_leaf(c) {
                            self.upper[c.0].iter_mut().for_each(|p| p.weight /= total);
                        }
                    }
                } else {
                    self.diagnostics.weight_resets += 1;
                    self.reset_level_weights(&alive);
                }
                self.rebuild_tree(&alive);
                self.rescale_outside(&alive);
            }
        }
        Ok(())
    }

    /// Rescales particles of classes outside `level` by the ratio of their
    /// class probability after and before the last rebuild.
    fn rescale_outside(&mut self, level: &[NodeId]) {
        let mut in_level = vec![false; self.tree.len()];
        for &c in level {
            in_level[c.0] = true;
        }
        let (probs, prev) = (&self.probs, &self.prev_probs);
        let mut leaf_counts = vec![0usize; self.tree.leaf_count()];
        for p in &self.leaf {
            leaf_counts[p.class.0] += 1;
        }
        let rescale = |p: &mut Particle, count: usize| {
            let c = p.class.0;
            p.weight = if prev[c] > 0.0 {
                p.weight * probs[c] / prev[c]
            } else {
                probs[c] / count as f64
            };
        };
        for p in self.leaf.iter_mut().filter(|p| !in_level[p.class.0]) {
            rescale(p, leaf_counts[p.class.0]);
        }
        for (id, ps) in self.upper.iter_mut().enumerate() {
            if !in_level[id] {
                let count = ps.len();
                ps.iter_mut().for_each(|p| rescale(p, count));
            }
        }
    }

    /// Resamples the leaf level, randomizes a `depletion` fraction of
    /// classes, then restores probabilities and parent levels.
    pub fn resample(&mut self) {
        let mut rng = self.seed.child(self.t).named("resample").rng();
        self.leaf = resample(&self.leaf, &self.leaf_ids, self.cfg.depletion, self.cfg.resample, &mut rng);
        self.rebuild_leaves();
        self.propagate_up();
    }

    /// One full filter iteration; `inspect` sees the posterior after the
    /// observation update and before resampling.
    pub fn step_with<R>(
        &mut self,
        observations: &[Observation],
        inspect: impl FnOnce(&Self) -> R,
    ) -> Result<R> {
        self.t += 1;
        self.rebuild_leaves();
        self.propagate_up();
        self.predict();
        for obs in observations.iter().filter(|o| o.is_fine()) {
            self.update(obs)?;
        }
        for obs in observations.iter().filter(|o| !o.is_fine()) {
            self.update(obs)?;
        }
        let out = inspect(self);
        self.resample();
        Ok(out)
    }

    /// [`Self::step_with`] returning a snapshot of every level.
    pub fn step(&mut self, observations: &[Observation]) -> Result<Snapshot> {
        let levels = self.tree.level_values();
        self.step_with(observations, |s| s.snapshot(&levels, &levels))
    }

    /// MAP class among the nodes alive at `b`; ties go to the smaller birth,
    /// then the smaller id.
    pub fn map_class(&self, b: f64) -> NodeId {
        let alive = self.tree.alive_at(b.max(0.0));
        let mut best = alive[0];
        for &c in &alive[1..] {
            let (pc, pb) = (self.probs[c.0], self.probs[best.0]);
            if pc > pb || (pc == pb && self.tree.birth(c) < self.tree.birth(best)) {
                best = c;
            }
        }
        best
    }

    /// Weighted mean of the leaf particle positions.
    pub fn point_estimate(&self) -> Point {
        weighted_mean(&self.leaf)
    }

    pub fn snapshot(&self, levels: &[f64], map_levels: &[f64]) -> Snapshot {
        Snapshot {
            t: self.t,
            levels: levels
                .iter()
                .map(|&b| LevelSnapshot {
                    b,
                    classes: self
                        .tree
                        .alive_at(b)
                        .into_iter()
                        .map(|id| ClassProb { id, prob: self.probs[id.0] })
                        .collect(),
                })
                .collect(),
            point_estimate: self.point_estimate(),
            map_class: map_levels.iter().map(|&b| MapClass { b, class: self.map_class(b) }).collect(),
        }
    }

    /// Checks normalization at every level value, parent additivity, level
    /// particle counts and weight/probability agreement, all within `tol`.
    pub fn check_consistency(&self, tol: f64) -> std::result::Result<(), String> {
        for b in self.tree.level_values() {
            let alive = self.tree.alive_at(b);
            let s: f64 = alive.iter().map(|c| self.probs[c.0]).sum();
            if (s - 1.0).abs() > tol {
                return Err(format!("level {b}: probabilities sum to {s}"));
            }
            let count: usize = alive.iter().map(|&c| self.particles_of(c).len()).sum();
            if count != self.cfg.n_particles {
                return Err(format!("level {b}: {count} particles, expected {}", self.cfg.n_particles));
            }
        }
        for id in self.tree.internal_ids() {
            let s: f64 = self.tree.node(id).children.iter().map(|c| self.probs[c.0]).sum();
            if (s - self.probs[id.0]).abs() > tol {
                return Err(format!("node {id}: P = {} but children sum to {s}", self.probs[id.0]));
            }
        }
        for node in self.tree.nodes() {
            let w: f64 = self.particles_of(node.id).iter().map(|p| p.weight).sum();
            if (w - self.probs[node.id.0]).abs() > tol {
                return Err(format!("node {}: weights sum to {w}, P = {}", node.id, self.probs[node.id.0]));
            }
            if self.particles_of(node.id).iter().any(|p| !(p.weight >= 0.0) || p.class != node.id) {
                return Err(format!("node {}: negative weight or foreign class", node.id));
            }
        }
        Ok(())
    }
}

pub(crate) fn predict_particles(ps: &mut [Particle], dynamics: &[ClassDynamics], rng: &mut Rng) -> u64 {
    let mut extrapolated = 0;
    for p in ps {
        let (z, flag) = dynamics[p.class.0].step_sample(&p.position, rng);
        p.position = z;
        extrapolated += flag as u64;
    }
    extrapolated
}

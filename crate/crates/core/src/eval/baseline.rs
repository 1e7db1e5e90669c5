//! Flat particle filters over a fixed set of classes, used for both
//! baselines: BL1 runs over the leaves, BL2 over the root alone.

use crate::dynamics::ClassDynamics;
use crate::error::{invalid, Result};
use crate::filter::{
    apply_fine_likelihood, class_masses, normalize, predict_particles, resample, weighted_mean, Diagnostics,
    FilterConfig, Observation, Particle, Prior,
};
use crate::filtration::NodeId;
use crate::geometry::Point;
use crate::seed::Seed;

#[derive(Debug, Clone)]
pub struct FlatFilter<'a> {
    dynamics: &'a [ClassDynamics],
    classes: Vec<NodeId>,
    cfg: FilterConfig,
    seed: Seed,
    t: u64,
    particles: Vec<Particle>,
    probs: Vec<f64>,
    diagnostics: Diagnostics,
}

impl<'a> FlatFilter<'a> {
    /// `dynamics` is indexed by class id; `classes` lists the classes the
    /// filter tracks, ascending.
    pub fn init(
        dynamics: &'a [ClassDynamics],
        classes: Vec<NodeId>,
        prior: &Prior,
        cfg: FilterConfig,
        seed: Seed,
    ) -> Result<Self> {
        cfg.validate()?;
        if classes.is_empty() {
            return invalid("flat filter needs at least one class");
        }
        if classes.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("classes must be strictly ascending");
        }
        if let Some(c) = classes.iter().find(|c| c.0 >= dynamics.len()) {
            return invalid(format!("no dynamics for class {c}"));
        }
        if let Some(c) = prior.components().iter().find(|c| classes.binary_search(&c.class).is_err()) {
            return invalid(format!("prior assigns mass to untracked class {}", c.class));
        }
        let particles = prior.sample(cfg.n_particles, &mut seed.named("init").rng());
        let mut f = FlatFilter {
            dynamics,
            classes,
            cfg,
            seed,
            t: 0,
            particles,
            probs: vec![0.0; dynamics.len()],
            diagnostics: Diagnostics::default(),
        };
        f.rebuild();
        Ok(f)
    }

    fn rebuild(&mut self) {
        let (mass, total) = class_masses(&self.particles, self.dynamics.len());
        if !(total > 0.0 && total.is_finite()) {
            self.diagnostics.weight_resets += 1;
            let u = 1.0 / self.particles.len() as f64;
            self.particles.iter_mut().for_each(|p| p.weight = u);
            return self.rebuild();
        }
        for &c in &self.classes {
            self.probs[c.0] = mass[c.0] / total;
        }
    }

    /// One iteration; coarse observations are ignored. `inspect` sees the
    /// posterior before resampling.
    pub fn step_with<R>(&mut self, observations: &[Observation], inspect: impl FnOnce(&Self) -> R) -> Result<R> {
        self.t += 1;
        self.rebuild();
        let mut rng = self.seed.child(self.t).named("predict").named("leaf").rng();
        self.diagnostics.extrapolated += predict_particles(&mut self.particles, self.dynamics, &mut rng);
        for obs in observations {
            if let Observation::Fine { position } = obs {
                apply_fine_likelihood(&mut self.particles, position)?;
                if !normalize(&mut self.particles) {
                    self.diagnostics.weight_resets += 1;
                }
                self.rebuild();
            }
        }
        let out = inspect(self);
        let mut rng = self.seed.child(self.t).named("resample").rng();
        self.particles = resample(&self.particles, &self.classes, self.cfg.depletion, self.cfg.resample, &mut rng);
        self.rebuild();
        Ok(out)
    }

    pub fn time(&self) -> u64 {
        self.t
    }

    pub fn classes(&self) -> &[NodeId] {
        &self.classes
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn prob(&self, c: NodeId) -> f64 {
        self.probs.get(c.0).copied().unwrap_or(0.0)
    }

    pub fn diagnostics(&self) -> Diagnostics {
        self.diagnostics
    }

    /// Highest-probability class; ties go to the smallest id.
    pub fn map_class(&self) -> NodeId {
        let mut best = self.classes[0];
        for &c in &self.classes[1..] {
            if self.probs[c.0] > self.probs[best.0] {
                best = c;
            }
        }
        best
    }

    pub fn point_estimate(&self) -> Point {
        weighted_mean(&self.particles)
    }
}

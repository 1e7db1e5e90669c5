//! Fine and coarse observation generators.
//!
//! Noise parameters are fractions of a length scale `L`, normally the
//! bounding-box diagonal of the corpus.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::NoiseMode;
use crate::error::{invalid, Result};
use crate::filter::Observation;
use crate::filtration::{ClusterTree, NodeId};
use crate::geometry::{Point, Trajectory};
use crate::kdtree::KdTree;
use crate::seed::Seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ObsMode {
    /// A fine observation every step, plus a coarse one with probability
    /// `coarse_prob`.
    MixedRandom { coarse_prob: f64 },
    /// Fine observations for the first `lead_in_fraction` of the trial, then
    /// coarse only.
    FineLeadInThenCoarse { lead_in_fraction: f64 },
    FineOnly,
}

impl ObsMode {
    /// Short form used in result tables, e.g. `mixed_random:0.5`.
    pub fn label(&self) -> String {
        match self {
            ObsMode::MixedRandom { coarse_prob } => format!("mixed_random:{coarse_prob}"),
            ObsMode::FineLeadInThenCoarse { lead_in_fraction } => format!("lead_in:{lead_in_fraction}"),
            ObsMode::FineOnly => "fine_only".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObsConfig {
    /// Observation noise as a fraction of the length scale.
    pub psi: f64,
    #[serde(default = "default_n_coarse")]
    pub n_coarse_samples: usize,
    /// Level `b_ξ` of coarse observations; `None` picks the tree's default.
    #[serde(default)]
    pub coarse_level: Option<f64>,
    #[serde(flatten)]
    pub mode: ObsMode,
    #[serde(default)]
    pub fine_noise: NoiseMode,
    /// In mixed mode, a coarse observation replaces that step's fine one.
    #[serde(default)]
    pub replace: bool,
}

fn default_n_coarse() -> usize {
    10
}

impl ObsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.psi >= 0.0 && self.psi.is_finite()) {
            return invalid(format!("psi must be non-negative, got {}", self.psi));
        }
        if self.n_coarse_samples == 0 {
            return invalid("n_coarse_samples must be at least 1");
        }
        match self.mode {
            ObsMode::MixedRandom { coarse_prob: p } | ObsMode::FineLeadInThenCoarse { lead_in_fraction: p }
                if !(0.0..=1.0).contains(&p) =>
            {
                invalid(format!("fraction {p} is outside [0, 1]"))
            }
            _ => Ok(()),
        }
    }
}

/// Bounding-box diagonal of a corpus.
pub fn bounding_diagonal<'a>(ts: impl IntoIterator<Item = &'a Trajectory>) -> f64 {
    let mut lo: Vec<f64> = Vec::new();
    let mut hi: Vec<f64> = Vec::new();
    for t in ts {
        for p in t.points() {
            if lo.is_empty() {
                lo = p.coords().to_vec();
                hi = p.coords().to_vec();
            }
            for (k, &x) in p.coords().iter().enumerate() {
                lo[k] = lo[k].min(x);
                hi[k] = hi[k].max(x);
            }
        }
    }
    lo.iter().zip(&hi).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt()
}

/// Fine observation: `z` plus per-coordinate noise of scale `psi * scale`.
pub fn gen_fine(z: &Point, psi: f64, scale: f64, noise: NoiseMode, rng: &mut impl Rng) -> Observation {
    let s = psi * scale;
    let coords = z.coords().iter().map(|x| x + noise.draw(s, rng)).collect();
    Observation::Fine { position: Point::from_vec(coords) }
}

/// Nearest-member-point lookup for every tree class.
#[derive(Debug, Clone)]
pub struct CoarseObserver<'a> {
    tree: &'a ClusterTree,
    leaf_index: Vec<KdTree>,
}

impl<'a> CoarseObserver<'a> {
    /// `trajectories[i]` is leaf `i` of `tree`.
    pub fn new(tree: &'a ClusterTree, trajectories: &[Trajectory]) -> Result<Self> {
        if trajectories.len() != tree.leaf_count() {
            return invalid("one trajectory per leaf is required");
        }
        let leaf_index = trajectories
            .iter()
            .map(|t| KdTree::from_points(t.dim(), t.points().iter().map(|p| p.coords())))
            .collect();
        Ok(CoarseObserver { tree, leaf_index })
    }

    pub fn tree(&self) -> &'a ClusterTree {
        self.tree
    }

    /// Squared distance from `z` to the nearest point of class `c`.
    pub fn nearest_sq(&self, c: NodeId, z: &[f64]) -> f64 {
        self.tree
            .node(c)
            .members
            .iter()
            .filter_map(|&m| self.leaf_index[m].nearest(z).map(|(_, d2)| d2))
            .fold(f64::INFINITY, f64::min)
    }

    /// The class alive at `level` with the highest Gaussian-kernel likelihood
    /// of the given samples; ties go to the smallest id.
    pub fn most_likely_class(&self, samples: &[Vec<f64>], level: f64) -> NodeId {
        // argmax of prod exp(-d²/2σ²) is argmin of Σ d², independent of σ.
        let alive = self.tree.alive_at(level);
        let mut best = (alive[0], f64::INFINITY);
        for &c in &alive {
            let cost: f64 = samples.iter().map(|s| self.nearest_sq(c, s)).sum();
            if cost < best.1 {
                best = (c, cost);
            }
        }
        best.0
    }
}

/// Coarse observation: `n` draws from an isotropic Gaussian at `z` with
/// standard deviation `psi * scale`, mapped to the most likely class alive
/// at `level`.
pub fn gen_coarse(
    z: &Point,
    psi: f64,
    scale: f64,
    observer: &CoarseObserver,
    level: f64,
    n: usize,
    rng: &mut impl Rng,
) -> Observation {
    let sigma = psi * scale;
    let samples: Vec<Vec<f64>> = (0..n.max(1))
        .map(|_| {
            z.coords()
                .iter()
                .map(|x| x + sigma * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    Observation::Coarse { class: observer.most_likely_class(&samples, level), level }
}

/// Observations for each step `t = 1 .. truth.len()-1` of a trial.
pub fn generate_stream(
    truth: &Trajectory,
    cfg: &ObsConfig,
    observer: &CoarseObserver,
    scale: f64,
    seed: Seed,
) -> Result<Vec<Vec<Observation>>> {
    cfg.validate()?;
    let level = cfg.coarse_level.unwrap_or_else(|| observer.tree().default_coarse_level());
    let steps = truth.len().saturating_sub(1);
    let mut rng = seed.named("observations").rng();
    let lead_in = match cfg.mode {
        ObsMode::FineLeadInThenCoarse { lead_in_fraction } => {
            (lead_in_fraction * steps as f64).ceil() as usize
        }
        _ => steps,
    };
    let mut out = Vec::with_capacity(steps);
    for t in 1..=steps {
        let z = &truth.points()[t];
        let mut obs = Vec::new();
        let coarse = match cfg.mode {
            ObsMode::FineOnly => false,
            ObsMode::MixedRandom { coarse_prob } => rng.random::<f64>() < coarse_prob,
            ObsMode::FineLeadInThenCoarse { .. } => t > lead_in,
        };
        let fine = match cfg.mode {
            ObsMode::FineLeadInThenCoarse { .. } => t <= lead_in,
            _ => !(coarse && cfg.replace),
        };
        if fine {
            obs.push(gen_fine(z, cfg.psi, scale, cfg.fine_noise, &mut rng));
        }
        if coarse {
            obs.push(gen_coarse(z, cfg.psi, scale, observer, level, cfg.n_coarse_samples, &mut rng));
        }
        out.push(obs);
    }
    Ok(out)
}

/// One line of an observation stream file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsRecord {
    pub t: u64,
    pub kind: ObsKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_id: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsKind {
    Fine,
    Coarse,
}

impl ObsRecord {
    pub fn from_observation(t: u64, obs: &Observation) -> Self {
        match obs {
            Observation::Fine { position } => ObsRecord {
                t,
                kind: ObsKind::Fine,
                position: Some(position.clone()),
                class_id: None,
                level: None,
            },
            Observation::Coarse { class, level } => ObsRecord {
                t,
                kind: ObsKind::Coarse,
                position: None,
                class_id: Some(*class),
                level: Some(*level),
            },
        }
    }

    pub fn to_observation(&self) -> Result<Observation> {
        match (self.kind, &self.position, self.class_id, self.level) {
            (ObsKind::Fine, Some(p), _, _) => Ok(Observation::Fine { position: Point::new(p.coords().to_vec())? }),
            (ObsKind::Coarse, _, Some(class), Some(level)) => Ok(Observation::Coarse { class, level }),
            _ => invalid(format!("observation record at t={} is missing fields", self.t)),
        }
    }
}

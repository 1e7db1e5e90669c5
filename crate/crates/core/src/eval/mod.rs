//! Baselines, metrics, single-trial runners and the experiment harness.

mod baseline;
mod experiment;

pub use baseline::FlatFilter;
pub use experiment::{
    run_experiment, summarize, trial_summaries, ExperimentConfig, ExperimentOutput, RawRecord, SummaryRow,
    TrialSummary,
};

use serde::{Deserialize, Serialize};

use crate::dynamics::{build_dynamics, ClassDynamics, DynamicsConfig};
use crate::error::{invalid, Error, Result};
use crate::filter::{Diagnostics, FilterConfig, FilterStack, Observation, Prior};
use crate::filtration::{ClusterTree, NodeId};
use crate::geometry::{dist_sq, DistanceMatrix, Point, Trajectory};
use crate::obsgen::{bounding_diagonal, CoarseObserver};
use crate::seed::Seed;

/// Squared Euclidean distance between prediction and truth.
pub fn mse(pred: &Point, truth: &Point) -> f64 {
    dist_sq(pred.coords(), truth.coords())
}

/// Tree class distance from `map` to the ancestor of `truth_leaf` alive at `b`.
pub fn class_distance_to_truth(tree: &ClusterTree, map: NodeId, truth_leaf: NodeId, b: f64) -> Result<f64> {
    let truth = tree
        .ancestor_alive_at(truth_leaf, b)
        .ok_or_else(|| Error::InvalidInput(format!("leaf {truth_leaf} has no ancestor alive at {b}")))?;
    tree.tree_class_distance(map, truth)
}

/// Tree class distance of the stack's MAP class at `b` to the truth.
pub fn map_tree_distance(stack: &FilterStack, truth_leaf: NodeId, b: f64) -> Result<f64> {
    class_distance_to_truth(stack.tree(), stack.map_class(b), truth_leaf, b)
}

/// First index from which every remaining entry is at most
/// `threshold_fraction * root_birth`; `None` if the last entry is above it.
pub fn convergence_time(series: &[f64], threshold_fraction: f64, root_birth: f64) -> Option<usize> {
    let threshold = threshold_fraction * root_birth;
    match series.iter().rposition(|&d| d > threshold) {
        None => Some(0),
        Some(i) if i + 1 < series.len() => Some(i + 1),
        Some(_) => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mhpf,
    Bl1,
    Bl2,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Mhpf, Method::Bl1, Method::Bl2];

    pub fn name(self) -> &'static str {
        match self {
            Method::Mhpf => "mhpf",
            Method::Bl1 => "bl1",
            Method::Bl2 => "bl2",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Whether the trial trajectory is part of the clustered corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Holdout {
    /// The truth is removed; its true class is the nearest remaining leaf.
    #[default]
    LeaveOneOut,
    Include,
}

/// A ground-truth trajectory and the corpus the filters are built from.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub truth: Trajectory,
    pub corpus: Vec<Trajectory>,
    pub tree: ClusterTree,
    pub true_leaf: NodeId,
    /// Bounding-box diagonal of the corpus; the unit of ψ.
    pub scale: f64,
}

impl Scenario {
    /// `dm` holds the Fréchet distances between all of `all`.
    pub fn prepare(all: &[Trajectory], dm: &DistanceMatrix, truth: usize, holdout: Holdout) -> Result<Self> {
        if dm.size() != all.len() {
            return invalid("distance matrix does not match the corpus");
        }
        if truth >= all.len() {
            return invalid(format!("truth index {truth} is out of range"));
        }
        if all[truth].len() < 2 {
            return invalid("the trial trajectory needs at least two points");
        }
        let keep: Vec<usize> = match holdout {
            Holdout::LeaveOneOut => (0..all.len()).filter(|&i| i != truth).collect(),
            Holdout::Include => (0..all.len()).collect(),
        };
        if keep.is_empty() {
            return invalid("leave-one-out needs at least two trajectories");
        }
        let corpus: Vec<Trajectory> = keep.iter().map(|&i| all[i].clone()).collect();
        let labels = corpus.iter().map(|t| t.id.clone()).collect();
        let tree = ClusterTree::single_linkage(&dm.submatrix(&keep), labels)?;
        let true_leaf = match holdout {
            Holdout::Include => truth,
            Holdout::LeaveOneOut => (0..keep.len())
                .min_by(|&a, &b| dm.get(truth, keep[a]).total_cmp(&dm.get(truth, keep[b])))
                .expect("non-empty corpus"),
        };
        Ok(Scenario {
            truth: all[truth].clone(),
            scale: bounding_diagonal(&corpus),
            corpus,
            tree,
            true_leaf: NodeId(true_leaf),
        })
    }

    pub fn steps(&self) -> usize {
        self.truth.len() - 1
    }

    /// Equal mass on every leaf, all starting at the truth's first point.
    pub fn prior(&self) -> Result<Prior> {
        Prior::uniform(self.tree.leaves().map(|c| (c, self.truth.first().clone())))
    }

    pub fn dynamics(&self, cfg: &DynamicsConfig) -> Result<Vec<ClassDynamics>> {
        build_dynamics(&self.tree, &self.corpus, cfg)
    }

    pub fn observer(&self) -> Result<CoarseObserver<'_>> {
        CoarseObserver::new(&self.tree, &self.corpus)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub seed: u64,
    pub kappa: f64,
    pub psi: f64,
    pub mode: String,
    pub scenario: usize,
    pub repeat: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub filter: FilterConfig,
    pub seed: Seed,
    /// Level at which MAP classes are compared with the truth.
    pub metric_level: f64,
    pub convergence_fraction: f64,
    /// Check stack consistency within this tolerance after every step.
    pub check_consistency: Option<f64>,
    pub meta: RunMeta,
}

impl RunSpec {
    pub fn new(filter: FilterConfig, seed: Seed) -> Self {
        RunSpec {
            filter,
            seed,
            metric_level: 0.0,
            convergence_fraction: 0.33,
            check_consistency: None,
            meta: RunMeta { seed: seed.0, ..RunMeta::default() },
        }
    }
}

/// Per-step metrics of one filter on one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub method: Method,
    pub mse: Vec<f64>,
    pub tree_distance: Vec<f64>,
    pub convergence: Option<usize>,
    pub diagnostics: Diagnostics,
    pub meta: RunMeta,
}

fn check_lengths(scn: &Scenario, obs: &[Vec<Observation>]) -> Result<()> {
    if obs.len() != scn.steps() {
        return invalid(format!("{} observation steps for a trial of {} steps", obs.len(), scn.steps()));
    }
    Ok(())
}

fn finish(
    method: Method,
    scn: &Scenario,
    spec: &RunSpec,
    metrics: Vec<(f64, f64)>,
    diagnostics: Diagnostics,
) -> ScenarioResult {
    let (mse, tree_distance): (Vec<f64>, Vec<f64>) = metrics.into_iter().unzip();
    ScenarioResult {
        method,
        convergence: convergence_time(&tree_distance, spec.convergence_fraction, scn.tree.root_birth()),
        mse,
        tree_distance,
        diagnostics,
        meta: spec.meta.clone(),
    }
}

/// The hierarchical filter on the scenario's tree.
pub fn run_mhpf(
    scn: &Scenario,
    dynamics: &[ClassDynamics],
    obs: &[Vec<Observation>],
    spec: &RunSpec,
) -> Result<ScenarioResult> {
    check_lengths(scn, obs)?;
    let prior = scn.prior()?;
    let mut stack = FilterStack::init(&scn.tree, dynamics, &prior, spec.filter, spec.seed)?;
    let check = |s: &FilterStack| -> Result<()> {
        match spec.check_consistency {
            Some(tol) => s.check_consistency(tol).map_err(|e| Error::InvalidInput(format!("t={}: {e}", s.time()))),
            None => Ok(()),
        }
    };
    let mut metrics = Vec::with_capacity(obs.len());
    for (k, step) in obs.iter().enumerate() {
        let truth = &scn.truth.points()[k + 1];
        let m = stack.step_with(step, |s| -> Result<(f64, f64)> {
            check(s)?;
            Ok((mse(&s.point_estimate(), truth), map_tree_distance(s, scn.true_leaf, spec.metric_level)?))
        })??;
        check(&stack)?;
        metrics.push(m);
    }
    Ok(finish(Method::Mhpf, scn, spec, metrics, stack.diagnostics()))
}

fn run_flat(
    method: Method,
    scn: &Scenario,
    dynamics: &[ClassDynamics],
    classes: Vec<NodeId>,
    prior: &Prior,
    obs: &[Vec<Observation>],
    spec: &RunSpec,
) -> Result<ScenarioResult> {
    check_lengths(scn, obs)?;
    let mut f = FlatFilter::init(dynamics, classes, prior, spec.filter, spec.seed)?;
    let mut metrics = Vec::with_capacity(obs.len());
    for (k, step) in obs.iter().enumerate() {
        let truth = &scn.truth.points()[k + 1];
        let m = f.step_with(step, |f| -> Result<(f64, f64)> {
            let d = class_distance_to_truth(&scn.tree, f.map_class(), scn.true_leaf, spec.metric_level)?;
            Ok((mse(&f.point_estimate(), truth), d))
        })??;
        metrics.push(m);
    }
    Ok(finish(method, scn, spec, metrics, f.diagnostics()))
}

/// BL1: a flat filter over the leaf classes with single-trajectory dynamics.
pub fn run_bl1(
    scn: &Scenario,
    dynamics: &[ClassDynamics],
    obs: &[Vec<Observation>],
    spec: &RunSpec,
) -> Result<ScenarioResult> {
    run_flat(Method::Bl1, scn, dynamics, scn.tree.leaves().collect(), &scn.prior()?, obs, spec)
}

/// BL2: a single-class filter with the dynamics of the whole corpus.
pub fn run_bl2(
    scn: &Scenario,
    dynamics: &[ClassDynamics],
    obs: &[Vec<Observation>],
    spec: &RunSpec,
) -> Result<ScenarioResult> {
    let root = scn.tree.root();
    run_flat(Method::Bl2, scn, dynamics, vec![root], &scn.prior()?.relabel(root), obs, spec)
}

pub fn run_method(
    method: Method,
    scn: &Scenario,
    dynamics: &[ClassDynamics],
    obs: &[Vec<Observation>],
    spec: &RunSpec,
) -> Result<ScenarioResult> {
    match method {
        Method::Mhpf => run_mhpf(scn, dynamics, obs, spec),
        Method::Bl1 => run_bl1(scn, dynamics, obs, spec),
        Method::Bl2 => run_bl2(scn, dynamics, obs, spec),
    }
}

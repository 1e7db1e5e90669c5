//! The scenario × repeat sweep and its CSV tables.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_method, Holdout, Method, RunMeta, RunSpec, Scenario};
use crate::datasets::DatasetSpec;
use crate::dynamics::{ClassDynamics, DynamicsConfig, NoiseMode};
use crate::error::{invalid, Result};
use crate::filter::FilterConfig;
use crate::geometry::distance_matrix;
use crate::obsgen::{generate_stream, ObsConfig, ObsMode};
use crate::seed::Seed;
use crate::stats::{mean, rank_sum, std_dev};

/// Experiment description, usually read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetSpec,
    #[serde(default = "defaults::scenarios")]
    pub scenarios: usize,
    #[serde(default = "defaults::repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub holdout: Holdout,
    #[serde(default)]
    pub metric_level: f64,
    #[serde(default = "defaults::convergence_fraction")]
    pub convergence_fraction: f64,
    pub kappas: Vec<f64>,
    pub psis: Vec<f64>,
    pub modes: Vec<ObsMode>,
    #[serde(default = "defaults::n_coarse_samples")]
    pub n_coarse_samples: usize,
    #[serde(default)]
    pub coarse_level: Option<f64>,
    #[serde(default)]
    pub replace: bool,
    #[serde(default)]
    pub fine_noise: NoiseMode,
    #[serde(default)]
    pub filter: FilterConfig,
    /// `kappa` here is ignored; the sweep sets it.
    #[serde(default)]
    pub dynamics: DynamicsConfig,
    #[serde(default = "defaults::methods")]
    pub methods: Vec<Method>,
    /// Verify stack consistency (tolerance 1e-9) after every MHPF step.
    #[serde(default)]
    pub check_consistency: bool,
}

mod defaults {
    use super::Method;

    pub fn scenarios() -> usize {
        10
    }
    pub fn repeats() -> usize {
        25
    }
    pub fn convergence_fraction() -> f64 {
        0.33
    }
    pub fn n_coarse_samples() -> usize {
        10
    }
    pub fn methods() -> Vec<Method> {
        Method::ALL.to_vec()
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| crate::Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenarios == 0 || self.repeats == 0 {
            return invalid("scenarios and repeats must be at least 1");
        }
        if self.kappas.is_empty() || self.psis.is_empty() || self.modes.is_empty() || self.methods.is_empty() {
            return invalid("kappas, psis, modes and methods must be non-empty");
        }
        if let Some(k) = self.kappas.iter().find(|k| !(**k >= 0.0 && k.is_finite())) {
            return invalid(format!("kappa must be non-negative, got {k}"));
        }
        if !(self.metric_level >= 0.0) {
            return invalid("metric_level must be non-negative");
        }
        if !(self.convergence_fraction > 0.0 && self.convergence_fraction <= 1.0) {
            return invalid("convergence_fraction must be in (0, 1]");
        }
        self.filter.validate()?;
        for cell in self.cells() {
            self.obs_config(&cell).validate()?;
        }
        Ok(())
    }

    fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &kappa in &self.kappas {
            for &psi in &self.psis {
                for &mode in &self.modes {
                    out.push(Cell { index: out.len(), kappa, psi, mode });
                }
            }
        }
        out
    }

    fn obs_config(&self, cell: &Cell) -> ObsConfig {
        ObsConfig {
            psi: cell.psi,
            n_coarse_samples: self.n_coarse_samples,
            coarse_level: self.coarse_level,
            mode: cell.mode,
            fine_noise: self.fine_noise,
            replace: self.replace,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    index: usize,
    kappa: f64,
    psi: f64,
    mode: ObsMode,
}

/// One row per (cell, scenario, repeat, method, step).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub cell: usize,
    pub kappa: f64,
    pub psi: f64,
    pub mode: String,
    pub scenario: usize,
    pub truth: String,
    pub repeat: usize,
    pub method: Method,
    pub step: usize,
    pub mse: f64,
    pub tree_distance: f64,
    pub root_birth: f64,
}

/// Per-trial aggregates of the raw records.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSummary {
    pub cell: usize,
    pub scenario: usize,
    pub repeat: usize,
    pub method: Method,
    pub steps: usize,
    pub mse_mean: f64,
    pub tree_distance_mean: f64,
    /// Mean tree distance over the last quarter of the steps.
    pub final_quarter_tree_distance: f64,
    pub convergence: Option<usize>,
}

impl TrialSummary {
    /// Convergence time with non-convergence censored at the trial length.
    pub fn convergence_censored(&self) -> f64 {
        self.convergence.unwrap_or(self.steps) as f64
    }
}

/// One row per (cell, method). p-values compare against BL1 in the same
/// cell on per-scenario means (two-sided Wilcoxon rank-sum).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub cell: usize,
    pub kappa: f64,
    pub psi: f64,
    pub mode: String,
    pub method: Method,
    pub trials: usize,
    pub mse_mean: f64,
    pub mse_sd: f64,
    pub tree_distance_mean: f64,
    pub tree_distance_sd: f64,
    pub final_quarter_mean: f64,
    pub final_quarter_sd: f64,
    pub convergence_mean: f64,
    pub convergence_sd: f64,
    pub converged_fraction: f64,
    pub p_mse: Option<f64>,
    pub p_tree_distance: Option<f64>,
    pub p_final_quarter: Option<f64>,
    pub p_convergence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub raw: Vec<RawRecord>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentOutput {
    /// Writes `raw.csv` and `summary.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|source| crate::Error::File { path: dir.to_path_buf(), source })?;
        write_csv(&dir.join("raw.csv"), &self.raw)?;
        write_csv(&dir.join("summary.csv"), &self.summary)
    }

    pub fn read_raw(path: &Path) -> Result<Vec<RawRecord>> {
        read_csv(path)
    }

    pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
        read_csv(path)
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(crate::io::create(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(crate::io::open(path)?);
    Ok(r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?)
}

/// Groups raw records into trials, in order of first appearance.
pub fn trial_summaries(raw: &[RawRecord], convergence_fraction: f64) -> Vec<TrialSummary> {
    let mut order: Vec<(usize, usize, usize, Method)> = Vec::new();
    let mut groups: BTreeMap<(usize, usize, usize, Method), Vec<&RawRecord>> = BTreeMap::new();
    for r in raw {
        let key = (r.cell, r.scenario, r.repeat, r.method);
        groups.entry(key).or_insert_with(|| {
            order.push(key);
            Vec::new()
        });
        groups.get_mut(&key).unwrap().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let rows = &groups[&key];
            let mse: Vec<f64> = rows.iter().map(|r| r.mse).collect();
            let dist: Vec<f64> = rows.iter().map(|r| r.tree_distance).collect();
            let quarter = dist.len().div_ceil(4);
            TrialSummary {
                cell: key.0,
                scenario: key.1,
                repeat: key.2,
                method: key.3,
                steps: rows.len(),
                mse_mean: mean(&mse),
                tree_distance_mean: mean(&dist),
                final_quarter_tree_distance: mean(&dist[dist.len() - quarter..]),
                convergence: super::convergence_time(&dist, convergence_fraction, rows[0].root_birth),
            }
        })
        .collect()
}

/// Per-scenario means of `f` over repeats, ordered by scenario.
fn scenario_means(trials: &[&TrialSummary], f: impl Fn(&TrialSummary) -> f64) -> Vec<f64> {
    let mut by: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for t in trials {
        by.entry(t.scenario).or_default().push(f(t));
    }
    by.values().map(|v| mean(v)).collect()
}

/// Recomputes the summary table from raw records.
pub fn summarize(raw: &[RawRecord], convergence_fraction: f64) -> Vec<SummaryRow> {
    let trials = trial_summaries(raw, convergence_fraction);
    let mut cells: BTreeMap<usize, (f64, f64, String)> = BTreeMap::new();
    for r in raw {
        cells.entry(r.cell).or_insert_with(|| (r.kappa, r.psi, r.mode.clone()));
    }
    let metrics: [fn(&TrialSummary) -> f64; 4] = [
        |t| t.mse_mean,
        |t| t.tree_distance_mean,
        |t| t.final_quarter_tree_distance,
        |t| t.convergence_censored(),
    ];
    let mut out = Vec::new();
    for (&cell, (kappa, psi, mode)) in &cells {
        let of = |m: Method| -> Vec<&TrialSummary> { trials.iter().filter(|t| t.cell == cell && t.method == m).collect() };
        let bl1 = of(Method::Bl1);
        for method in Method::ALL {
            let ts = of(method);
            if ts.is_empty() {
                continue;
            }
            let vals: Vec<Vec<f64>> = metrics.iter().map(|f| ts.iter().map(|t| f(t)).collect()).collect();
            let p = |f: &fn(&TrialSummary) -> f64| -> Option<f64> {
                if method == Method::Bl1 || bl1.is_empty() {
                    return None;
                }
                rank_sum(&scenario_means(&ts, f), &scenario_means(&bl1, f)).map(|r| r.p_two_sided)
            };
            out.push(SummaryRow {
                cell,
                kappa: *kappa,
                psi: *psi,
                mode: mode.clone(),
                method,
                trials: ts.len(),
                mse_mean: mean(&vals[0]),
                mse_sd: std_dev(&vals[0]),
                tree_distance_mean: mean(&vals[1]),
                tree_distance_sd: std_dev(&vals[1]),
                final_quarter_mean: mean(&vals[2]),
                final_quarter_sd: std_dev(&vals[2]),
                convergence_mean: mean(&vals[3]),
                convergence_sd: std_dev(&vals[3]),
                converged_fraction: ts.iter().filter(|t| t.convergence.is_some()).count() as f64 / ts.len() as f64,
                p_mse: p(&metrics[0]),
                p_tree_distance: p(&metrics[1]),
                p_final_quarter: p(&metrics[2]),
                p_convergence: p(&metrics[3]),
            });
        }
    }
    out
}

/// Runs every method on every (cell, scenario, repeat) and tabulates.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let base = Seed(cfg.seed);
    let all = cfg.dataset.generate(base.named("dataset"))?;
    if all.len() < 2 {
        return invalid("the corpus needs at least two trajectories");
    }
    let dm = distance_matrix(&all)?;
    let mut order: Vec<usize> = (0..all.len()).collect();
    order.shuffle(&mut base.named("scenarios").rng());
    let truths: Vec<usize> = (0..cfg.scenarios).map(|s| order[s % order.len()]).collect();
    let scenarios = truths
        .par_iter()
        .map(|&i| Scenario::prepare(&all, &dm, i, cfg.holdout))
        .collect::<Result<Vec<_>>>()?;
    let observers = scenarios.iter().map(|s| s.observer()).collect::<Result<Vec<_>>>()?;
    // dynamics[k][s]: κ index, scenario index.
    let dynamics: Vec<Vec<Vec<ClassDynamics>>> = cfg
        .kappas
        .iter()
        .map(|&kappa| {
            let dc = DynamicsConfig { kappa, ..cfg.dynamics };
            scenarios.par_iter().map(|s| s.dynamics(&dc)).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let cells = cfg.cells();
    let tasks: Vec<(Cell, usize, usize)> = cells
        .iter()
        .flat_map(|c| (0..cfg.scenarios).flat_map(move |s| (0..cfg.repeats).map(move |r| (*c, s, r))))
        .collect();
    let per_cell_kappa = cfg.psis.len() * cfg.modes.len();
    let results = tasks
        .par_iter()
        .map(|&(cell, s, r)| -> Result<Vec<RawRecord>> {
            let scn = &scenarios[s];
            let trial_seed = base.named("trial").child(cell.index as u64).child(s as u64).child(r as u64);
            let obs = generate_stream(&scn.truth, &cfg.obs_config(&cell), &observers[s], scn.scale, trial_seed.named("obs"))?;
            let mut spec = RunSpec::new(cfg.filter, trial_seed.named("filter"));
            spec.metric_level = cfg.metric_level;
            spec.convergence_fraction = cfg.convergence_fraction;
            spec.check_consistency = cfg.check_consistency.then_some(1e-9);
            spec.meta = RunMeta { seed: spec.seed.0, kappa: cell.kappa, psi: cell.psi, mode: cell.mode.label(), scenario: s, repeat: r };
            let dynamics = &dynamics[cell.index / per_cell_kappa][s];
            let mut rows = Vec::new();
            for &method in &cfg.methods {
                let res = run_method(method, scn, dynamics, &obs, &spec)?;
                for (k, (&mse, &d)) in res.mse.iter().zip(&res.tree_distance).enumerate() {
                    rows.push(RawRecord {
                        cell: cell.index,
                        kappa: cell.kappa,
                        psi: cell.psi,
                        mode: spec.meta.mode.clone(),
                        scenario: s,
                        truth: scn.truth.id.clone(),
                        repeat: r,
                        method,
                        step: k + 1,
                        mse,
                        tree_distance: d,
                        root_birth: scn.tree.root_birth(),
                    });
                }
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    let raw: Vec<RawRecord> = results.into_iter().flatten().collect();
    let summary = summarize(&raw, cfg.convergence_fraction);
    Ok(ExperimentOutput { raw, summary })
}

//! Acceptance criteria, one test per criterion. Each prints a single
//! `criterion N: PASS|FAIL ...` line before asserting.
//!
//! Tests share a lock so wall-clock budgets are measured one at a time.

use std::collections::BTreeSet;
use std::io::Write;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::Rng;

use mhpf::datasets::{discretize_uniform, gen_fixed_endpoints};
use mhpf::dynamics::{build_dynamics, DynamicsConfig};
use mhpf::eval::{run_experiment, trial_summaries, ExperimentConfig, ExperimentOutput, FlatFilter, Holdout, Method, Scenario, TrialSummary};
use mhpf::filter::{FilterConfig, FilterStack, Observation, Prior, ResampleScheme};
use mhpf::geometry::{distance_matrix, frechet_distance};
use mhpf::obsgen::gen_fine;
use mhpf::seed::Seed;
use mhpf::stats::{mean, rank_sum};
use mhpf::{ClusterTree, DistanceMatrix, NodeId, Point, Trajectory};

static SERIAL: Mutex<()> = Mutex::new(());

const CONSISTENCY_TOL: f64 = 1e-9;
const SIGNIFICANCE: f64 = 0.05;

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Written to the process stdout directly so the line shows without
/// `--nocapture`.
fn report(n: usize, pass: bool, detail: impl AsRef<str>) -> bool {
    let line = format!("criterion {n}: {} {}\n", if pass { "PASS" } else { "FAIL" }, detail.as_ref());
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).and_then(|_| out.flush()).unwrap();
    pass
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

// ---------------------------------------------------------------------------
// 1. Fréchet distance against exhaustive couplings

/// Minimum over every monotone coupling of the largest paired distance,
/// by explicit enumeration of lattice paths.
fn brute_frechet(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    fn d(p: (f64, f64), q: (f64, f64)) -> f64 {
        ((p.0 - q.0) * (p.0 - q.0) + (p.1 - q.1) * (p.1 - q.1)).sqrt()
    }
    fn walk(a: &[(f64, f64)], b: &[(f64, f64)], i: usize, j: usize, worst: f64, best: &mut f64) {
        let worst = worst.max(d(a[i], b[j]));
        if i == a.len() - 1 && j == b.len() - 1 {
            *best = best.min(worst);
            return;
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, worst, best);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, worst, best);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, worst, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, 0, 0, 0.0, &mut best);
    best
}

#[test]
fn criterion_1_frechet_matches_exhaustive_couplings() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = Seed(1001).rng();
    let mut mismatches = 0;
    for pair in 0..200 {
        let m = rng.random_range(1..=9);
        let n = rng.random_range(1..=10 - m);
        // Every other pair on a coarse integer grid so equal distances occur.
        let mut pts = |k: usize| -> Vec<(f64, f64)> {
            (0..k)
                .map(|_| {
                    if pair % 2 == 0 {
                        (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0))
                    } else {
                        (rng.random_range(0..4) as f64, rng.random_range(0..4) as f64)
                    }
                })
                .collect()
        };
        let (a, b) = (pts(m), pts(n));
        let expected = brute_frechet(&a, &b);
        let ta = Trajectory::from_xy("a", &a).unwrap();
        let tb = Trajectory::from_xy("b", &b).unwrap();
        let got = frechet_distance(&ta, &tb).unwrap();
        if got != expected {
            mismatches += 1;
            eprintln!("pair {pair}: dp {got} vs exhaustive {expected}");
        }
    }
    let elapsed = start.elapsed();
    let pass = mismatches == 0 && elapsed < Duration::from_secs(10);
    assert!(report(1, pass, format!("200 pairs, {mismatches} mismatches, {} (limit 10s)", secs(elapsed))));
}

// ---------------------------------------------------------------------------
// 2. Single-linkage tree against a naive agglomeration

#[derive(Debug, PartialEq)]
struct OracleNode {
    members: Vec<usize>,
    birth: f64,
    death: Option<f64>,
}

/// Repeatedly merges the two clusters with the smallest minimum pairwise
/// distance, scanning every member pair. Ties go to the smallest pair of
/// cluster ids; new clusters are numbered after the leaves in merge order.
fn naive_single_linkage(d: &[Vec<f64>]) -> Vec<OracleNode> {
    let m = d.len();
    let mut nodes: Vec<OracleNode> = (0..m).map(|i| OracleNode { members: vec![i], birth: 0.0, death: None }).collect();
    let mut active: Vec<usize> = (0..m).collect();
    while active.len() > 1 {
        let mut best: Option<(f64, usize, usize)> = None;
        for (x, &a) in active.iter().enumerate() {
            for &b in &active[x + 1..] {
                let mut link = f64::INFINITY;
                for &i in &nodes[a].members {
                    for &j in &nodes[b].members {
                        link = link.min(d[i][j]);
                    }
                }
                let cand = (link, a.min(b), a.max(b));
                let better = match best {
                    None => true,
                    Some(cur) => cand.0 < cur.0 || (cand.0 == cur.0 && (cand.1, cand.2) < (cur.1, cur.2)),
                };
                if better {
                    best = Some(cand);
                }
            }
        }
        let (h, a, b) = best.unwrap();
        let mut members = nodes[a].members.clone();
        members.extend(&nodes[b].members);
        members.sort_unstable();
        nodes[a].death = Some(h);
        nodes[b].death = Some(h);
        nodes.push(OracleNode { members, birth: h, death: None });
        active.retain(|&k| k != a && k != b);
        active.push(nodes.len() - 1);
    }
    nodes
}

fn random_matrix(m: usize, ties: bool, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut d = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in i + 1..m {
            let v = if ties { rng.random_range(1..=4) as f64 } else { rng.random_range(0.01..10.0) };
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

#[test]
fn criterion_2_clustering_matches_naive_oracle() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = Seed(1002).rng();
    let mut tree_mismatches = 0;
    let mut ultrametric_violations = 0;
    let mut triples = 0usize;
    for k in 0..100 {
        let m = rng.random_range(2..=12);
        let rows = random_matrix(m, k % 3 == 2, &mut rng);
        let tree = ClusterTree::single_linkage(&DistanceMatrix::from_rows(rows.clone()).unwrap(), (0..m).map(|i| format!("t{i}")).collect()).unwrap();
        let oracle = naive_single_linkage(&rows);
        let got: Vec<OracleNode> = tree
            .nodes()
            .iter()
            .map(|n| OracleNode { members: n.members.clone(), birth: n.birth, death: n.death })
            .collect();
        if got != oracle {
            tree_mismatches += 1;
            eprintln!("matrix {k}: tree differs from oracle");
        }
        let mut sorted_heights = tree.merge_heights();
        sorted_heights.sort_by(f64::total_cmp);
        let mut oracle_heights: Vec<f64> = oracle[m..].iter().map(|n| n.birth).collect();
        oracle_heights.sort_by(f64::total_cmp);
        if sorted_heights != oracle_heights {
            tree_mismatches += 1;
        }
        let dt = |i: usize, j: usize| tree.tree_class_distance(NodeId(i), NodeId(j)).unwrap();
        for i in 0..m {
            for j in 0..m {
                for l in 0..m {
                    triples += 1;
                    if dt(i, l) > dt(i, j).max(dt(j, l)) {
                        ultrametric_violations += 1;
                    }
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = tree_mismatches == 0 && ultrametric_violations == 0 && elapsed < Duration::from_secs(30);
    assert!(report(
        2,
        pass,
        format!(
            "100 matrices, {tree_mismatches} tree mismatches, {ultrametric_violations}/{triples} ultrametric violations, {} (limit 30s)",
            secs(elapsed)
        )
    ));
}

// ---------------------------------------------------------------------------
// 3. Consistency under randomized filtering

fn thirteen() -> Vec<Trajectory> {
    gen_fixed_endpoints(13, &mut Seed(1003).rng()).unwrap()
}

/// Independent check of the level and parent sums from the raw probability
/// vector, plus the realized particle count at each level.
fn invariant_violation(stack: &FilterStack, levels: &[f64], n: usize) -> Option<String> {
    let tree = stack.tree();
    let probs = stack.probs();
    for &b in levels {
        let alive: Vec<NodeId> = tree.nodes().iter().filter(|c| c.alive_at(b)).map(|c| c.id).collect();
        let s: f64 = alive.iter().map(|c| probs[c.0]).sum();
        if (s - 1.0).abs() > CONSISTENCY_TOL {
            return Some(format!("level {b} sums to {s}"));
        }
        let count: usize = alive.iter().map(|&c| stack.particles_of(c).len()).sum();
        if count != n {
            return Some(format!("level {b} holds {count} particles"));
        }
    }
    for node in tree.nodes().iter().filter(|c| !c.children.is_empty()) {
        let s: f64 = node.children.iter().map(|c| probs[c.0]).sum();
        if (s - probs[node.id.0]).abs() > CONSISTENCY_TOL {
            return Some(format!("node {} is {} but its children sum to {s}", node.id, probs[node.id.0]));
        }
    }
    stack.check_consistency(CONSISTENCY_TOL).err()
}

#[test]
fn criterion_3_randomized_steps_stay_consistent() {
    let _g = serial();
    let start = Instant::now();
    let corpus = thirteen();
    let tree = ClusterTree::single_linkage(&distance_matrix(&corpus).unwrap(), corpus.iter().map(|t| t.id.clone()).collect()).unwrap();
    let root_birth = tree.root_birth();
    let mut rng = Seed(1004).rng();
    let mut steps = 0;
    let mut failures = Vec::new();
    for run in 0..10 {
        let kappa = [0.0, 0.3, 0.5, 0.75][run % 4];
        let dynamics = build_dynamics(&tree, &corpus, &DynamicsConfig { kappa, ..Default::default() }).unwrap();
        let n = *[50, 100, 150].choose(&mut rng).unwrap();
        let cfg = FilterConfig {
            n_particles: n,
            depletion: rng.random_range(0.0..0.1),
            resample: if run % 2 == 0 { ResampleScheme::Multinomial } else { ResampleScheme::Systematic },
        };
        let prior = Prior::uniform(tree.leaves().map(|c| (c, corpus[c.0].first().clone()))).unwrap();
        let mut stack = FilterStack::init(&tree, &dynamics, &prior, cfg, Seed(run as u64)).unwrap();
        for _ in 0..100 {
            let mut obs = Vec::new();
            if rng.random_bool(0.7) {
                let t = &corpus[rng.random_range(0..corpus.len())];
                let z = t.points()[rng.random_range(0..t.len())].coords();
                obs.push(Observation::Fine { position: Point::xy(z[0] + rng.random_range(-1.0..1.0), z[1] + rng.random_range(-1.0..1.0)) });
            }
            if rng.random_bool(0.5) {
                let level = rng.random_range(0.0..1.2 * root_birth);
                let alive = tree.alive_at(level);
                obs.push(Observation::Coarse { class: *alive.choose(&mut rng).unwrap(), level });
            }
            // Every merge height plus 20 random levels, fresh each step.
            let mut levels = tree.level_values();
            levels.extend((0..20).map(|_| rng.random_range(0.0..1.5 * root_birth)));
            stack.step(&obs).unwrap();
            steps += 1;
            if let Some(e) = invariant_violation(&stack, &levels, n) {
                failures.push(format!("run {run} t={}: {e}", stack.time()));
            }
        }
    }
    let elapsed = start.elapsed();
    for f in failures.iter().take(5) {
        eprintln!("{f}");
    }
    let pass = failures.is_empty() && elapsed < Duration::from_secs(60);
    assert!(report(3, pass, format!("{steps} steps, {} violations at tol {CONSISTENCY_TOL:e}, {} (limit 60s)", failures.len(), secs(elapsed))));
}

// ---------------------------------------------------------------------------
// 4. Baselines reduce to layers of the stack

#[derive(Debug, PartialEq)]
struct StepState {
    estimate: Point,
    probs: Vec<f64>,
    map: usize,
    particles: Vec<(Point, usize, f64)>,
}

/// Class ids are mapped to their index in `classes` so the two filters can
/// use different labels for the same class.
fn flat_state(f: &FlatFilter, classes: &[NodeId]) -> StepState {
    let idx = |c: NodeId| classes.iter().position(|&k| k == c).unwrap();
    StepState {
        estimate: f.point_estimate(),
        probs: classes.iter().map(|&c| f.prob(c)).collect(),
        map: idx(f.map_class()),
        particles: f.particles().iter().map(|p| (p.position.clone(), idx(p.class), p.weight)).collect(),
    }
}

fn stack_state(s: &FilterStack, classes: &[NodeId]) -> StepState {
    let idx = |c: NodeId| classes.iter().position(|&k| k == c).unwrap();
    StepState {
        estimate: s.point_estimate(),
        probs: classes.iter().map(|&c| s.prob(c)).collect(),
        map: idx(s.map_class(0.0)),
        particles: s.leaf_particles().iter().map(|p| (p.position.clone(), idx(p.class), p.weight)).collect(),
    }
}

#[test]
fn criterion_4_baselines_equal_stack_layers() {
    let _g = serial();
    let all = thirteen();
    let dm = distance_matrix(&all).unwrap();
    let dyn_cfg = DynamicsConfig { kappa: 0.3, ..Default::default() };
    let cfg = FilterConfig::default();
    let mut diverged = Vec::new();
    let mut compared = 0;
    for (k, truth) in [2usize, 7, 11].into_iter().enumerate() {
        let scn = Scenario::prepare(&all, &dm, truth, Holdout::LeaveOneOut).unwrap();
        let dynamics = scn.dynamics(&dyn_cfg).unwrap();
        let prior = scn.prior().unwrap();
        // 101 points give 100 filter steps.
        let path = discretize_uniform(&scn.truth, 101).unwrap();
        let mut orng = Seed(40 + k as u64).rng();
        let obs: Vec<Vec<Observation>> =
            path.points()[1..].iter().map(|z| vec![gen_fine(z, 0.05, scn.scale, Default::default(), &mut orng)]).collect();
        let seed = Seed(400 + k as u64);

        // BL1 against a stack on the flat tree over the same leaves.
        let leaves: Vec<NodeId> = scn.tree.leaves().collect();
        let flat_tree = ClusterTree::flat(scn.tree.labels().to_vec(), scn.tree.root_birth()).unwrap();
        let flat_dyn = build_dynamics(&flat_tree, &scn.corpus, &dyn_cfg).unwrap();
        let mut bl1 = FlatFilter::init(&dynamics, leaves.clone(), &prior, cfg, seed).unwrap();
        let mut bottom = FilterStack::init(&flat_tree, &flat_dyn, &prior, cfg, seed).unwrap();

        // BL2 against the stack on a single-node tree with the root's model.
        let root = scn.tree.root();
        let single = ClusterTree::flat(vec!["all".into()], 1.0).unwrap();
        let single_dyn = vec![dynamics[root.0].relabel(NodeId(0))];
        let mut bl2 = FlatFilter::init(&dynamics, vec![root], &prior.relabel(root), cfg, seed).unwrap();
        let mut top = FilterStack::init(&single, &single_dyn, &prior.relabel(NodeId(0)), cfg, seed).unwrap();

        for step in &obs {
            let a = bl1.step_with(step, |f| flat_state(f, &leaves)).unwrap();
            let b = bottom.step_with(step, |s| stack_state(s, &leaves)).unwrap();
            let c = bl2.step_with(step, |f| flat_state(f, &[root])).unwrap();
            let d = top.step_with(step, |s| stack_state(s, &[NodeId(0)])).unwrap();
            compared += 1;
            if a != b {
                diverged.push(format!("truth {truth}: BL1 differs at t={}", bl1.time()));
            }
            if c != d {
                diverged.push(format!("truth {truth}: BL2 differs at t={}", bl2.time()));
            }
        }
    }
    for d in diverged.iter().take(5) {
        eprintln!("{d}");
    }
    let pass = diverged.is_empty() && compared == 300;
    assert!(report(4, pass, format!("3 scenarios x 100 steps, {} divergent snapshots", diverged.len())));
}

// ---------------------------------------------------------------------------
// Experiment-backed criteria

fn experiment(toml: &str) -> (ExperimentOutput, Vec<TrialSummary>, Duration) {
    let cfg = ExperimentConfig::from_toml(toml).unwrap();
    let start = Instant::now();
    let out = run_experiment(&cfg).unwrap();
    let elapsed = start.elapsed();
    let trials = trial_summaries(&out.raw, cfg.convergence_fraction);
    (out, trials, elapsed)
}

fn per_method(trials: &[TrialSummary], method: Method, f: impl Fn(&TrialSummary) -> f64) -> Vec<f64> {
    trials.iter().filter(|t| t.method == method).map(f).collect()
}

/// Per-(cell, scenario) means of `f`, the unit the rank-sum test runs on.
fn scenario_means(trials: &[TrialSummary], method: Method, f: impl Fn(&TrialSummary) -> f64) -> Vec<f64> {
    let keys: BTreeSet<(usize, usize)> = trials.iter().map(|t| (t.cell, t.scenario)).collect();
    keys.into_iter()
        .map(|(c, s)| {
            let xs: Vec<f64> = trials.iter().filter(|t| t.method == method && t.cell == c && t.scenario == s).map(&f).collect();
            mean(&xs)
        })
        .collect()
}

#[test]
fn criterion_5_fine_only_ordering_on_obstacle_world() {
    let _g = serial();
    let (_, trials, elapsed) = experiment(
        r#"
        seed = 5
        scenarios = 10
        repeats = 25
        kappas = [0.3]
        psis = [0.05]
        modes = [{ mode = "fine_only" }]
        methods = ["mhpf", "bl1", "bl2"]
        [dataset]
        kind = "obstacle_world"
        n = 33
        "#,
    );
    let mse = |t: &TrialSummary| t.mse_mean;
    let (m, b1, b2) = (
        mean(&per_method(&trials, Method::Mhpf, mse)),
        mean(&per_method(&trials, Method::Bl1, mse)),
        mean(&per_method(&trials, Method::Bl2, mse)),
    );
    let p = rank_sum(&scenario_means(&trials, Method::Mhpf, mse), &scenario_means(&trials, Method::Bl1, mse))
        .map_or(1.0, |r| r.p_two_sided);
    let pass = m < b1 && b1 < b2 && p < SIGNIFICANCE;
    assert!(report(
        5,
        pass,
        format!("mean MSE mhpf {m:.4} bl1 {b1:.4} bl2 {b2:.4}, p(mhpf vs bl1) = {p:.3} (need < {SIGNIFICANCE}), {}", secs(elapsed))
    ));
}

#[test]
fn criterion_6_coarse_observations_improve_final_class_distance() {
    let _g = serial();
    let (out, _, elapsed) = experiment(
        r#"
        seed = 6
        scenarios = 10
        repeats = 25
        kappas = [0.3, 0.5, 0.75]
        psis = [0.01, 0.05]
        modes = [{ mode = "mixed_random", coarse_prob = 0.5 }]
        methods = ["mhpf", "bl1"]
        [dataset]
        kind = "fixed_endpoints"
        n = 13
        "#,
    );
    let mut worse = Vec::new();
    let mut cells = 0;
    for row in out.summary.iter().filter(|r| r.method == Method::Mhpf) {
        let bl1 = out.summary.iter().find(|r| r.cell == row.cell && r.method == Method::Bl1).unwrap();
        cells += 1;
        println!(
            "  cell kappa={} psi={}: final-quarter distance mhpf {:.4} bl1 {:.4}",
            row.kappa, row.psi, row.final_quarter_mean, bl1.final_quarter_mean
        );
        if !(row.final_quarter_mean < bl1.final_quarter_mean) {
            worse.push(row.cell);
        }
    }
    let pass = cells == 6 && worse.is_empty() && elapsed < Duration::from_secs(15 * 60);
    assert!(report(6, pass, format!("MHPF below BL1 in {}/{cells} cells, {} (limit 15min)", cells - worse.len(), secs(elapsed))));
}

#[test]
fn criterion_7_lead_in_convergence() {
    let _g = serial();
    let (_, trials, elapsed) = experiment(
        r#"
        seed = 7
        scenarios = 10
        repeats = 25
        kappas = [0.3, 0.75]
        psis = [0.01]
        modes = [
            { mode = "fine_lead_in_then_coarse", lead_in_fraction = 0.05 },
            { mode = "fine_lead_in_then_coarse", lead_in_fraction = 0.075 },
        ]
        methods = ["mhpf", "bl1"]
        [dataset]
        kind = "fixed_endpoints"
        n = 13
        "#,
    );
    let conv = |t: &TrialSummary| t.convergence_censored();
    let (m, b) = (mean(&per_method(&trials, Method::Mhpf, conv)), mean(&per_method(&trials, Method::Bl1, conv)));
    let p = rank_sum(&scenario_means(&trials, Method::Mhpf, conv), &scenario_means(&trials, Method::Bl1, conv))
        .map_or(1.0, |r| r.p_two_sided);
    let pass = m < b && p < SIGNIFICANCE;
    assert!(report(
        7,
        pass,
        format!("mean convergence step mhpf {m:.2} bl1 {b:.2}, pooled p = {p:.4} (need < {SIGNIFICANCE}), {}", secs(elapsed))
    ));
}

#[test]
fn criterion_8_harbor_pipeline() {
    let _g = serial();
    // Every trial runs the full invariant check at each step and fails the
    // experiment on the first violation.
    let (_, trials, elapsed) = experiment(
        r#"
        seed = 8
        scenarios = 5
        repeats = 4
        kappas = [0.1, 0.3]
        psis = [0.1, 0.2]
        modes = [{ mode = "mixed_random", coarse_prob = 0.5 }]
        methods = ["mhpf", "bl1"]
        check_consistency = true
        [dataset]
        kind = "harbor"
        n = 194
        "#,
    );
    let dist = |t: &TrialSummary| t.tree_distance_mean;
    let (m, b) = (mean(&per_method(&trials, Method::Mhpf, dist)), mean(&per_method(&trials, Method::Bl1, dist)));
    let n = per_method(&trials, Method::Mhpf, dist).len();
    let pass = n == 80 && m - b <= 0.0 && elapsed < Duration::from_secs(30 * 60);
    assert!(report(
        8,
        pass,
        format!("{n} trials per method, mean class distance mhpf {m:.4} bl1 {b:.4} (difference {:.4}), {} (limit 30min)", m - b, secs(elapsed))
    ));
}

//! `mhpf` command-line interface.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mhpf::datasets::{self, DensityGrid, WalkConfig};
use mhpf::dynamics::{build_dynamics, DynamicsConfig, NoiseMode};
use mhpf::eval::{run_experiment, ExperimentConfig};
use mhpf::filter::ResampleScheme;
use mhpf::geometry::distance_matrix;
use mhpf::io;
use mhpf::obsgen::{bounding_diagonal, generate_stream, CoarseObserver, ObsConfig, ObsMode};
use mhpf::seed::Seed;
use mhpf::{ClusterTree, Error, FilterConfig, FilterStack, Observation, Point, Prior, Result, Trajectory};

#[derive(Parser, Debug)]
#[command(name = "mhpf", version, about = "Hierarchical particle filtering over trajectory cluster trees")]
struct Cli {
    /// Maximum number of worker threads (default: one per core)
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a trajectory corpus or an observation stream
    Gen {
        #[command(subcommand)]
        kind: GenKind,
    },
    /// Cluster trajectories into a single-linkage tree
    Cluster(ClusterArgs),
    /// Run the filter over an observation stream and print one snapshot per step
    Filter(FilterArgs),
    /// Run an experiment sweep and write metric tables
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct GenOut {
    /// Random seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file (newline-delimited JSON)
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum GenKind {
    /// Trajectories sharing a stem that splits into branches
    Junction {
        /// Number of branches
        #[arg(long, default_value_t = 2)]
        branches: usize,
        /// Trajectories per branch
        #[arg(long, default_value_t = 7)]
        per_branch: usize,
        /// Uniform jitter on control points
        #[arg(long, default_value_t = 0.05)]
        jitter: f64,
        #[command(flatten)]
        out: GenOut,
    },
    /// Paths sharing their first and last points
    FixedEndpoints {
        /// Number of trajectories
        #[arg(long, default_value_t = 13)]
        n: usize,
        #[command(flatten)]
        out: GenOut,
    },
    /// Collision-free paths among rectangular obstacles
    ObstacleWorld {
        /// Number of trajectories
        #[arg(long, default_value_t = 33)]
        n: usize,
        #[command(flatten)]
        out: GenOut,
    },
    /// Random walks over the built-in harbor density raster
    Harbor {
        /// Number of trajectories
        #[arg(long, default_value_t = 194)]
        n: usize,
        /// Also write the raster in the ASCII grid format
        #[arg(long, value_name = "FILE")]
        grid_out: Option<PathBuf>,
        #[command(flatten)]
        out: GenOut,
    },
    /// Random walks over a density grid file (ASCII or PGM)
    DensityWalk {
        /// Density grid file
        #[arg(long, value_name = "FILE")]
        grid: PathBuf,
        /// Number of trajectories
        #[arg(long, default_value_t = 194)]
        n: usize,
        /// Start cell "x,y"; repeat for several, used round-robin
        #[arg(long = "start", value_name = "X,Y", required = true, value_parser = parse_cell)]
        starts: Vec<(usize, usize)>,
        /// Maximum moves per walk
        #[arg(long, default_value_t = 60)]
        max_steps: usize,
        /// Weight of continuing the previous heading, in [0, 1]
        #[arg(long, default_value_t = 0.8)]
        persistence: f64,
        /// Exponent applied to cell densities
        #[arg(long, default_value_t = 1.0)]
        exponent: f64,
        /// Points per output trajectory
        #[arg(long, default_value_t = 100)]
        points: usize,
        #[command(flatten)]
        out: GenOut,
    },
    /// Observations of one trajectory against a clustered corpus
    Observations(ObsArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ModeArg {
    /// Fine observations only
    FineOnly,
    /// Fine every step plus random coarse ones
    Mixed,
    /// Fine lead-in, then coarse only
    LeadIn,
}

#[derive(Args, Debug)]
struct ObsArgs {
    /// Corpus the classes come from
    #[arg(long, value_name = "FILE")]
    trajectories: PathBuf,
    /// Tree of the corpus (clustered on the fly if omitted)
    #[arg(long, value_name = "FILE")]
    tree: Option<PathBuf>,
    /// File holding the observed trajectory
    #[arg(long, value_name = "FILE")]
    truth: PathBuf,
    /// Id of the observed trajectory (default: first record)
    #[arg(long, value_name = "ID")]
    truth_id: Option<String>,
    /// Noise as a fraction of the corpus bounding-box diagonal
    #[arg(long, default_value_t = 0.05)]
    psi: f64,
    /// Which observations each step receives
    #[arg(long, value_enum, default_value_t = ModeArg::FineOnly)]
    mode: ModeArg,
    /// Probability of a coarse observation per step (mixed mode)
    #[arg(long, default_value_t = 0.5)]
    coarse_prob: f64,
    /// Fraction of steps with fine observations (lead-in mode)
    #[arg(long, default_value_t = 0.05)]
    lead_in: f64,
    /// Level of coarse observations (default: first level with at most half the leaves)
    #[arg(long)]
    coarse_level: Option<f64>,
    /// Gaussian samples per coarse observation
    #[arg(long, default_value_t = 10)]
    coarse_samples: usize,
    /// In mixed mode, coarse observations replace that step's fine one
    #[arg(long)]
    replace: bool,
    /// Centre fine-observation noise on zero
    #[arg(long)]
    centered_noise: bool,
    #[command(flatten)]
    out: GenOut,
}

#[derive(Args, Debug)]
struct ClusterArgs {
    /// Trajectory file
    #[arg(long, short, value_name = "FILE")]
    input: PathBuf,
    /// Tree JSON output
    #[arg(long, short, value_name = "FILE")]
    out: PathBuf,
    /// Text dendrogram output (default: stdout)
    #[arg(long, value_name = "FILE")]
    dendrogram: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FilterArgs {
    /// Corpus trajectories, one leaf each
    #[arg(long, value_name = "FILE")]
    trajectories: PathBuf,
    /// Tree of the corpus (clustered on the fly if omitted)
    #[arg(long, value_name = "FILE")]
    tree: Option<PathBuf>,
    /// Observation stream
    #[arg(long, value_name = "FILE")]
    obs: PathBuf,
    /// Initial position "x,y,..." (default: first fine observation)
    #[arg(long, value_name = "COORDS", value_parser = parse_coords)]
    start: Option<Vec<f64>>,
    /// Particles per level
    #[arg(long, default_value_t = 100)]
    particles: usize,
    /// Fraction of particles given a random class after resampling
    #[arg(long, default_value_t = 0.01)]
    depletion: f64,
    /// Resampling scheme
    #[arg(long, value_enum, default_value_t = ResampleArg::Multinomial)]
    resample: ResampleArg,
    /// Process noise relative to the mean class speed
    #[arg(long, default_value_t = 0.3)]
    kappa: f64,
    /// Lower bound on the velocity neighbourhood radius
    #[arg(long, default_value_t = 0.1)]
    epsilon_floor: f64,
    /// One neighbourhood radius for every class
    #[arg(long)]
    global_epsilon: Option<f64>,
    /// Centre process noise on zero
    #[arg(long)]
    centered_noise: bool,
    /// Levels to report, comma separated (default: every merge height and 0)
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<f64>>,
    /// Levels for MAP classes, comma separated (default: same as --levels)
    #[arg(long, value_delimiter = ',')]
    map_levels: Option<Vec<f64>>,
    /// Random seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Snapshot output (default: stdout)
    #[arg(long, short, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ResampleArg {
    Multinomial,
    Systematic,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Experiment config (TOML)
    #[arg(long, short, value_name = "FILE")]
    config: PathBuf,
    /// Directory for raw.csv and summary.csv
    #[arg(long, short, value_name = "DIR")]
    out: PathBuf,
    /// Override the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of scenarios
    #[arg(long)]
    scenarios: Option<usize>,
    /// Override the number of repeats
    #[arg(long)]
    repeats: Option<usize>,
}

fn parse_coords(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect()
}

fn parse_cell(s: &str) -> std::result::Result<(usize, usize), String> {
    match s.split_once(',') {
        Some((x, y)) => Ok((
            x.trim().parse().map_err(|e| format!("{x:?}: {e}"))?,
            y.trim().parse().map_err(|e| format!("{y:?}: {e}"))?,
        )),
        None => Err(format!("expected \"x,y\", got {s:?}")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::FAILURE;
        }
        pool = pool.num_threads(n);
    }
    let result = match pool.build() {
        Ok(pool) => pool.install(|| run(cli.command)),
        Err(e) => Err(Error::Config(e.to_string())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen { kind } => cmd_gen(kind),
        Command::Cluster(a) => cmd_cluster(a),
        Command::Filter(a) => cmd_filter(a),
        Command::Eval(a) => cmd_eval(a),
    }
}

fn cmd_gen(kind: GenKind) -> Result<()> {
    let (ts, out) = match kind {
        GenKind::Junction { branches, per_branch, jitter, out } => {
            (datasets::gen_junction(branches, per_branch, jitter, &mut Seed(out.seed).rng())?, out)
        }
        GenKind::FixedEndpoints { n, out } => (datasets::gen_fixed_endpoints(n, &mut Seed(out.seed).rng())?, out),
        GenKind::ObstacleWorld { n, out } => (datasets::gen_obstacle_world(n, &mut Seed(out.seed).rng())?, out),
        GenKind::Harbor { n, grid_out, out } => {
            if let Some(path) = grid_out {
                let (grid, _) = datasets::harbor_grid(60, 40)?;
                io::create(&path)?.write_all(grid.to_ascii().as_bytes())?;
            }
            (datasets::gen_harbor_corpus(n, &mut Seed(out.seed).rng())?, out)
        }
        GenKind::DensityWalk { grid, n, starts, max_steps, persistence, exponent, points, out } => {
            let grid = DensityGrid::load(&grid)?;
            let cfg = WalkConfig {
                n_trajectories: n,
                max_steps,
                direction_persistence: persistence,
                density_exponent: exponent,
                starts,
                n_points: points,
            };
            (datasets::walk_from_density(&grid, &cfg, &mut Seed(out.seed).rng())?, out)
        }
        GenKind::Observations(a) => return gen_observations(a),
    };
    io::save_trajectories(&out.out, &ts)
}

fn load_tree_for(trajectories: &[Trajectory], tree: Option<&Path>) -> Result<ClusterTree> {
    match tree {
        Some(path) => io::load_tree(path),
        None => {
            let d = distance_matrix(trajectories)?;
            ClusterTree::single_linkage(&d, trajectories.iter().map(|t| t.id.clone()).collect())
        }
    }
}

fn gen_observations(a: ObsArgs) -> Result<()> {
    let corpus = io::load_trajectories(&a.trajectories)?;
    let tree = load_tree_for(&corpus, a.tree.as_deref())?;
    let candidates = io::load_trajectories(&a.truth)?;
    let truth = match &a.truth_id {
        Some(id) => candidates.iter().find(|t| &t.id == id),
        None => candidates.first(),
    }
    .ok_or_else(|| Error::InvalidInput(format!("no matching trajectory in {}", a.truth.display())))?;
    let mode = match a.mode {
        ModeArg::FineOnly => ObsMode::FineOnly,
        ModeArg::Mixed => ObsMode::MixedRandom { coarse_prob: a.coarse_prob },
        ModeArg::LeadIn => ObsMode::FineLeadInThenCoarse { lead_in_fraction: a.lead_in },
    };
    let cfg = ObsConfig {
        psi: a.psi,
        n_coarse_samples: a.coarse_samples,
        coarse_level: a.coarse_level,
        mode,
        fine_noise: if a.centered_noise { NoiseMode::Centered } else { NoiseMode::OneSided },
        replace: a.replace,
    };
    let observer = CoarseObserver::new(&tree, &corpus)?;
    let steps = generate_stream(truth, &cfg, &observer, bounding_diagonal(&corpus), Seed(a.out.seed))?;
    let mut w = BufWriter::new(io::create(&a.out.out)?);
    io::write_observations(&mut w, &steps)?;
    w.flush()?;
    Ok(())
}

fn cmd_cluster(a: ClusterArgs) -> Result<()> {
    let ts = io::load_trajectories(&a.input)?;
    let tree = load_tree_for(&ts, None)?;
    io::save_tree(&a.out, &tree)?;
    let text = tree.dendrogram();
    match a.dendrogram {
        Some(path) => io::create(&path)?.write_all(text.as_bytes())?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn cmd_filter(a: FilterArgs) -> Result<()> {
    let corpus = io::load_trajectories(&a.trajectories)?;
    let tree = load_tree_for(&corpus, a.tree.as_deref())?;
    let steps = io::read_observations(BufReader::new(io::open(&a.obs)?))?;
    let dyn_cfg = DynamicsConfig {
        kappa: a.kappa,
        epsilon_floor: a.epsilon_floor,
        global_epsilon: a.global_epsilon,
        noise: if a.centered_noise { NoiseMode::Centered } else { NoiseMode::OneSided },
    };
    if !(a.kappa >= 0.0 && a.kappa.is_finite()) {
        return Err(Error::InvalidInput(format!("--kappa must be non-negative, got {}", a.kappa)));
    }
    let dynamics = build_dynamics(&tree, &corpus, &dyn_cfg)?;
    let start = match a.start {
        Some(c) => Point::new(c)?,
        None => steps
            .iter()
            .flatten()
            .find_map(|o| match o {
                Observation::Fine { position } => Some(position.clone()),
                _ => None,
            })
            .ok_or_else(|| Error::InvalidInput("no fine observation to start from; pass --start".into()))?,
    };
    let prior = Prior::uniform(tree.leaves().map(|c| (c, start.clone())))?;
    let cfg = FilterConfig {
        n_particles: a.particles,
        depletion: a.depletion,
        resample: match a.resample {
            ResampleArg::Multinomial => ResampleScheme::Multinomial,
            ResampleArg::Systematic => ResampleScheme::Systematic,
        },
    };
    let levels = a.levels.unwrap_or_else(|| tree.level_values());
    let map_levels = a.map_levels.unwrap_or_else(|| levels.clone());
    if let Some(b) = levels.iter().chain(&map_levels).find(|b| !(**b >= 0.0)) {
        return Err(Error::InvalidInput(format!("levels must be non-negative, got {b}")));
    }
    let mut stack = FilterStack::init(&tree, &dynamics, &prior, cfg, Seed(a.seed))?;
    let sink: Box<dyn Write> = match &a.out {
        Some(path) => Box::new(io::create(path)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = BufWriter::new(sink);
    for step in &steps {
        let snap = stack.step_with(step, |s| s.snapshot(&levels, &map_levels))?;
        serde_json::to_writer(&mut w, &snap)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let mut text = String::new();
    io::open(&a.config)?.read_to_string(&mut text)?;
    let mut cfg = ExperimentConfig::from_toml(&text)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.scenarios {
        cfg.scenarios = n;
    }
    if let Some(n) = a.repeats {
        cfg.repeats = n;
    }
    let out = run_experiment(&cfg)?;
    out.write(&a.out)?;
    eprintln!(
        "wrote {} raw rows and {} summary rows to {}",
        out.raw.len(),
        out.summary.len(),
        a.out.display()
    );
    Ok(())
}

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use meshdqn::agent::{read_checkpoint, write_checkpoint, Checkpoint, Learner};
use meshdqn::config::RunConfig;
use meshdqn::env::{
    evaluate, greedy_rollout, random_rollout, ActionTaken, CoarsenEnv, Problem, Rollout, Summary,
};
use meshdqn::flow::{analytic_snapshots, AnalyticKind, AnalyticParams};
use meshdqn::interp::io::write_snapshots;
use meshdqn::interp::VelocityOrder;
use meshdqn::mesh::msh::write_msh;
use meshdqn::mesh::{gen_channel_mesh, gen_obstacle_channel_mesh, BoundaryTag, ObstacleCells};
use meshdqn::train::run_training;

#[derive(Parser)]
#[command(
    name = "meshdqn",
    version,
    about = "Coarsen CFD meshes while preserving boundary forces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent; writes checkpoint.mdqc, metrics.jsonl and summary.json.
    Train(Common),
    /// Greedy rollout of a trained checkpoint; writes final_mesh.msh, trajectory.csv and summary.json.
    Rollout {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Random or greedy-oracle removals with the same outputs as `rollout`.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        strategy: Strategy,
    },
    /// Write a channel mesh with analytic snapshots and a matching config.toml.
    Fixture(FixtureArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    episodes: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    Random,
    Greedy,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long, value_enum, default_value = "poiseuille")]
    kind: FixtureKind,
    #[arg(long, default_value_t = 21)]
    nx: usize,
    #[arg(long, default_value_t = 13)]
    ny: usize,
    #[arg(long, default_value_t = 2.0)]
    length: f64,
    #[arg(long, default_value_t = 1.0)]
    height: f64,
    /// Body cut out of the grid as `i0,i1,j0,j1` cell bounds (end exclusive).
    #[arg(long, value_parser = parse_obstacle)]
    obstacle: Option<ObstacleCells>,
    #[arg(long, default_value_t = 1.0)]
    u_max: f64,
    #[arg(long, default_value_t = 5)]
    snapshots: usize,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u32).range(1..=2))]
    order: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum FixtureKind {
    Poiseuille,
    Uniform,
    LinearShear,
}

fn parse_obstacle(s: &str) -> Result<ObstacleCells, String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [i0, i1, j0, j1] => Ok(ObstacleCells { i0, i1, j0, j1 }),
        _ => Err("expected four comma-separated cell bounds".into()),
    }
}

/// Failure classes mapped to exit codes.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

trait Classify<T> {
    fn usage(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }
    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MESHDQN_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(common) => cmd_train(&common),
        Command::Rollout { common, checkpoint } => cmd_rollout(&common, &checkpoint),
        Command::Baseline { common, strategy } => cmd_baseline(&common, strategy),
        Command::Fixture(args) => cmd_fixture(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path).usage()?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.training.seed = seed;
    }
    if let Some(w) = common.workers {
        cfg.training.workers = w;
    }
    if let Some(e) = common.episodes {
        cfg.training.episodes = e;
    }
    if let Some(out) = &common.out {
        cfg.paths.out = out.clone();
    }
    cfg.validate().usage()?;
    Ok(cfg)
}

fn load_problem(cfg: &RunConfig) -> Result<Arc<Problem>, Failure> {
    let mesh = cfg
        .paths
        .mesh
        .as_ref()
        .ok_or_else(|| anyhow!("config has no paths.mesh"))
        .usage()?;
    let snaps = cfg
        .paths
        .snapshots
        .as_ref()
        .ok_or_else(|| anyhow!("config has no paths.snapshots"))
        .usage()?;
    let problem = Problem::load(mesh, snaps, &cfg.tags, cfg.env_config())
        .with_context(|| format!("loading {} and {}", mesh.display(), snaps.display()))
        .usage()?;
    if problem.source.len() != cfg.environment.n_snapshots {
        log::warn!(
            "snapshot file holds {} snapshots, config says {}",
            problem.source.len(),
            cfg.environment.n_snapshots
        );
    }
    Ok(Arc::new(problem))
}

fn out_dir(cfg: &RunConfig) -> Result<&Path, Failure> {
    fs::create_dir_all(&cfg.paths.out)
        .with_context(|| format!("creating {}", cfg.paths.out.display()))
        .runtime()?;
    Ok(&cfg.paths.out)
}

#[derive(Serialize)]
struct TrainSummary {
    episodes: u64,
    transitions: u64,
    weights_version: u64,
    evaluation: Summary,
    #[serde(skip_serializing_if = "Option::is_none")]
    best: Option<BestSummary>,
}

#[derive(Serialize)]
struct BestSummary {
    episode: u64,
    greedy_reward: f64,
    evaluation: Summary,
}

fn cmd_train(common: &Common) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let problem = load_problem(&cfg)?;
    let learner = cfg.new_learner(problem.source.len()).usage()?;
    let out = out_dir(&cfg)?;
    let ck_path = out.join("checkpoint.mdqc");
    let train_cfg = cfg.train_config(Some(ck_path.clone()));
    let mut metrics = BufWriter::new(File::create(out.join("metrics.jsonl")).runtime()?);
    let outcome = run_training(
        &train_cfg,
        learner,
        |_| Ok(CoarsenEnv::new(Arc::clone(&problem))),
        &mut metrics,
    )
    .runtime()?;
    metrics.flush().runtime()?;
    let ck = Checkpoint {
        learner: outcome.learner,
        seed: cfg.training.seed,
    };
    write_checkpoint(&ck, &ck_path).runtime()?;
    let rollout = evaluate(ck.learner.q_select(), Arc::clone(&problem)).runtime()?;
    // The best greedy policy is saved with both networks set to it, so
    // `rollout --checkpoint best.mdqc` replays it.
    let best = match outcome.best {
        Some(b) => {
            let learner = Learner::new(cfg.learner_config(), b.net.clone(), b.net);
            let evaluation = evaluate(learner.q_select(), Arc::clone(&problem))
                .runtime()?
                .summary();
            let ck = Checkpoint {
                learner,
                seed: cfg.training.seed,
            };
            write_checkpoint(&ck, out.join("best.mdqc")).runtime()?;
            Some(BestSummary {
                episode: b.episode,
                greedy_reward: b.reward,
                evaluation,
            })
        }
        None => None,
    };
    let summary = TrainSummary {
        episodes: outcome.metrics.len() as u64,
        transitions: outcome.transitions_ingested,
        weights_version: outcome.published.last().copied().unwrap_or(1),
        evaluation: rollout.summary(),
        best,
    };
    write_json(&out.join("summary.json"), &summary)?;
    println!("final: {}", summary.evaluation);
    if let Some(b) = &summary.best {
        println!("best (after {} episodes): {}", b.episode, b.evaluation);
    }
    Ok(())
}

fn cmd_rollout(common: &Common, checkpoint: &Path) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let problem = load_problem(&cfg)?;
    let ck = read_checkpoint(checkpoint)
        .with_context(|| format!("reading {}", checkpoint.display()))
        .usage()?;
    let net = ck.learner.q_select();
    let want = cfg.network_config(problem.source.len());
    if (net.config.in_features, net.config.n_actions) != (want.in_features, want.n_actions) {
        return Err(Failure::Usage(anyhow!(
            "checkpoint expects {} features and {} actions, the problem gives {} and {}",
            net.config.in_features,
            net.config.n_actions,
            want.in_features,
            want.n_actions
        )));
    }
    let rollout = evaluate(net, problem).runtime()?;
    write_rollout(&cfg, &rollout)
}

fn cmd_baseline(common: &Common, strategy: Strategy) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let problem = load_problem(&cfg)?;
    let rollout = match strategy {
        Strategy::Random => random_rollout(problem, cfg.training.seed),
        Strategy::Greedy => greedy_rollout(problem),
    }
    .runtime()?;
    write_rollout(&cfg, &rollout)
}

fn write_rollout(cfg: &RunConfig, rollout: &Rollout) -> Result<(), Failure> {
    let out = out_dir(cfg)?;
    write_msh(rollout.final_mesh(), out.join("final_mesh.msh"), &cfg.tags).runtime()?;
    let mut csv = BufWriter::new(File::create(out.join("trajectory.csv")).runtime()?);
    write_trajectory(rollout, &mut csv).runtime()?;
    csv.flush().runtime()?;
    let summary = rollout.summary();
    write_json(&out.join("summary.json"), &summary)?;
    println!("{summary}");
    Ok(())
}

fn write_trajectory(rollout: &Rollout, w: &mut impl Write) -> std::io::Result<()> {
    let k = rollout.records.first().map_or(0, |r| r.drag.len());
    write!(w, "step,action,error,reward,n_vertices")?;
    for i in 1..=k {
        write!(w, ",drag_{i}")?;
    }
    for i in 1..=k {
        write!(w, ",lift_{i}")?;
    }
    writeln!(w)?;
    for r in &rollout.records {
        let action = match r.action {
            None => String::new(),
            Some(ActionTaken::NoRemoval) => "no-removal".into(),
            Some(ActionTaken::Remove { vertex_id, .. }) => vertex_id.to_string(),
        };
        let reward = r.reward.map(|v| v.to_string()).unwrap_or_default();
        write!(
            w,
            "{},{action},{},{reward},{}",
            r.step, r.error, r.n_vertices
        )?;
        for v in r.drag.iter().chain(&r.lift) {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).runtime()?;
    fs::write(path, text + "\n")
        .with_context(|| format!("writing {}", path.display()))
        .runtime()
}

fn cmd_fixture(args: &FixtureArgs) -> Result<(), Failure> {
    if args.snapshots == 0 {
        return Err(Failure::Usage(anyhow!("--snapshots must be positive")));
    }
    let mesh = match args.obstacle {
        Some(o) => gen_obstacle_channel_mesh(args.nx, args.ny, args.length, args.height, o),
        None => gen_channel_mesh(args.nx, args.ny, args.length, args.height),
    }
    .usage()?;
    let mut cfg = RunConfig::default();
    let order = VelocityOrder::try_from(args.order)
        .map_err(anyhow::Error::msg)
        .usage()?;
    let params = AnalyticParams {
        u_max: args.u_max,
        length: args.length,
        height: args.height,
        n_snapshots: args.snapshots,
        order,
        fluid: cfg.fluid,
    };
    let kind = match args.kind {
        FixtureKind::Poiseuille => AnalyticKind::Poiseuille,
        FixtureKind::Uniform => AnalyticKind::Uniform,
        FixtureKind::LinearShear => AnalyticKind::LinearShear,
    };
    let snaps = analytic_snapshots(kind, &mesh, &params).usage()?;
    let n_interior = mesh.interior_vertices().count();
    if n_interior == 0 {
        return Err(Failure::Usage(anyhow!("fixture has no interior vertices")));
    }

    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .runtime()?;
    let out = fs::canonicalize(&args.out).runtime()?;
    let mesh_path = out.join("mesh.msh");
    let snap_path = out.join("snapshots.mdqs");
    write_msh(&mesh, &mesh_path, &cfg.tags).runtime()?;
    write_snapshots(&snaps, &snap_path).runtime()?;

    cfg.paths = meshdqn::config::Paths {
        mesh: Some(mesh_path),
        snapshots: Some(snap_path),
        out: out.join("run"),
    };
    cfg.environment.n_snapshots = args.snapshots;
    cfg.environment.velocity_order = order;
    cfg.environment.window = cfg.environment.window.min((n_interior / 2).max(1));
    // Analytic fields are exact Stokes solutions, so the net force on a closed
    // body vanishes; the walls carry the measurable drag.
    cfg.environment.property_tag = BoundaryTag::Wall;
    // With gamma = 1 a long horizon pays for stalling with 'no removal'; keep
    // episodes just past the removal target.
    let target = (cfg.environment.removal_fraction * mesh.n_vertices() as f64).ceil() as usize;
    cfg.training.max_episode_steps = target + 4;
    cfg.training.eval_every = 50;
    let text = cfg.to_toml_string().runtime()?;
    fs::write(out.join("config.toml"), text).runtime()?;
    println!(
        "wrote {} vertices, {} triangles to {}",
        mesh.n_vertices(),
        mesh.n_triangles(),
        out.display()
    );
    Ok(())
}

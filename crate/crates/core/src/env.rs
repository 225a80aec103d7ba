//! The coarsening environment: a window of interior vertices nearest the
//! measured body is the state; an action removes one of them (then smooths
//! and re-interpolates the original snapshots) or shifts the window outward.

use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    argmax, property_error, reward, AgentError, Environment, Outcome, RewardConfig, Step,
};
use crate::flow::{compute_property, FlowError, FluidConstants, PropertyKind};
use crate::interp::{interpolate, io::read_snapshot_file, InterpError, SnapshotSet};
use crate::mesh::msh::{read_msh, PhysicalTags};
use crate::mesh::{distance, BoundaryTag, MeshError, TriMesh};
use crate::nn::{Graph, GraphBatch, NnError, QNetwork};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Interp(#[from] InterpError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(
        "window of {window} at offset {offset} needs more than the {available} interior vertices"
    )]
    InsufficientVertices {
        window: usize,
        offset: usize,
        available: usize,
    },
    #[error("no vertex carries the {0} tag")]
    NoTaggedVertices(BoundaryTag),
    #[error("action {action} outside 0..={max}")]
    InvalidAction { action: usize, max: usize },
    #[error("episode is already done")]
    EpisodeDone,
    #[error("invalid environment configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    /// Window size `N`; the action space is `N + 1`.
    pub window: usize,
    pub removal_fraction: f64,
    pub smoothing_iterations: usize,
    /// Boundary whose force is measured and around which the window is built.
    pub property_tag: BoundaryTag,
    pub property: PropertyKind,
    pub reward: RewardConfig,
    pub fluid: FluidConstants,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            window: 180,
            removal_fraction: 0.05,
            smoothing_iterations: 50,
            property_tag: BoundaryTag::Airfoil,
            property: PropertyKind::Drag,
            reward: RewardConfig::default(),
            fluid: FluidConstants::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.window == 0 {
            return Err(EnvError::Config(
                "window must hold at least one vertex".into(),
            ));
        }
        if !(self.removal_fraction > 0.0 && self.removal_fraction < 1.0) {
            return Err(EnvError::Config(format!(
                "removal fraction {} outside (0, 1)",
                self.removal_fraction
            )));
        }
        if !self.property_tag.is_boundary() {
            return Err(EnvError::Config(
                "property tag must be a boundary tag".into(),
            ));
        }
        self.reward.validate()?;
        Ok(())
    }

    pub fn n_actions(&self) -> usize {
        self.window + 1
    }
}

/// Window of interior vertices with their node features and induced edges.
#[derive(Debug, Clone, PartialEq)]
pub struct StateGraph {
    pub window: Vec<usize>,
    pub offset: usize,
    pub graph: GraphBatch,
}

/// Interior vertices sorted by distance to the nearest vertex tagged `tag`, ties by index.
pub fn rank_interior(mesh: &TriMesh, tag: BoundaryTag) -> Result<Vec<usize>, EnvError> {
    let targets: Vec<usize> = (0..mesh.n_vertices())
        .filter(|&v| mesh.tag(v) == tag)
        .collect();
    if targets.is_empty() {
        return Err(EnvError::NoTaggedVertices(tag));
    }
    let mut ranked: Vec<(f64, usize)> = mesh
        .interior_vertices()
        .map(|v| {
            let p = mesh.vertex(v);
            let d = targets
                .iter()
                .map(|&t| distance(p, mesh.vertex(t)))
                .fold(f64::INFINITY, f64::min);
            (d, v)
        })
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(ranked.into_iter().map(|(_, v)| v).collect())
}

/// Node features `[x, y, (ux, uy) per snapshot, p per snapshot]` on ranks `[offset, offset + n)`.
pub fn build_state(
    mesh: &TriMesh,
    snaps: &SnapshotSet,
    n: usize,
    offset: usize,
    tag: BoundaryTag,
) -> Result<StateGraph, EnvError> {
    snaps.check_mesh(mesh)?;
    let ranked = rank_interior(mesh, tag)?;
    if ranked.len() < offset + n {
        return Err(EnvError::InsufficientVertices {
            window: n,
            offset,
            available: ranked.len(),
        });
    }
    let window = ranked[offset..offset + n].to_vec();
    let k = snaps.len();
    let mut x = Array2::zeros((n, 2 + 3 * k));
    let mut slot = vec![usize::MAX; mesh.n_vertices()];
    for (i, &v) in window.iter().enumerate() {
        slot[v] = i;
        let p = mesh.vertex(v);
        x[[i, 0]] = p[0];
        x[[i, 1]] = p[1];
        for (s, snap) in snaps.snapshots().iter().enumerate() {
            x[[i, 2 + 2 * s]] = snap.ux[v];
            x[[i, 3 + 2 * s]] = snap.uy[v];
            x[[i, 2 + 2 * k + s]] = snap.p[v];
        }
    }
    let (mut edges, mut attr) = (Vec::new(), Vec::new());
    for &[a, b] in mesh.edges() {
        if slot[a] != usize::MAX && slot[b] != usize::MAX {
            let d = distance(mesh.vertex(a), mesh.vertex(b));
            edges.extend([[slot[a], slot[b]], [slot[b], slot[a]]]);
            attr.extend([d, d]);
        }
    }
    let graph = GraphBatch::new(x, Graph::single(n, edges, attr)?)?;
    Ok(StateGraph {
        window,
        offset,
        graph,
    })
}

/// Inputs shared by every episode: the loaded solution, the smoothed initial
/// mesh with its interpolated snapshots, and the ground-truth properties.
#[derive(Debug, Clone)]
pub struct Problem {
    pub config: EnvConfig,
    pub source_mesh: TriMesh,
    pub source: SnapshotSet,
    pub initial_mesh: TriMesh,
    pub initial: SnapshotSet,
    /// Ground truth of the configured property.
    pub ground_truth: Vec<f64>,
    pub n_gt: usize,
    pub target_removals: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forces {
    pub drag: Vec<f64>,
    pub lift: Vec<f64>,
}

fn forces(mesh: &TriMesh, snaps: &SnapshotSet, cfg: &EnvConfig) -> Result<Forces, EnvError> {
    let drag =
        compute_property(snaps, mesh, cfg.property_tag, PropertyKind::Drag, cfg.fluid)?.values;
    let lift =
        compute_property(snaps, mesh, cfg.property_tag, PropertyKind::Lift, cfg.fluid)?.values;
    Ok(Forces { drag, lift })
}

impl Forces {
    pub fn get(&self, kind: PropertyKind) -> &[f64] {
        match kind {
            PropertyKind::Drag => &self.drag,
            PropertyKind::Lift => &self.lift,
        }
    }
}

impl Problem {
    pub fn new(mesh: TriMesh, snaps: SnapshotSet, config: EnvConfig) -> Result<Self, EnvError> {
        config.validate()?;
        snaps.check_mesh(&mesh)?;
        let initial_mesh = mesh.smooth(config.smoothing_iterations)?;
        let initial = interpolate(&snaps, &mesh, &initial_mesh)?;
        let f = forces(&initial_mesh, &initial, &config)?;
        let ground_truth = f.get(config.property).to_vec();
        if let Some(k) = ground_truth.iter().position(|&g| g == 0.0) {
            return Err(AgentError::ZeroGroundTruth(k).into());
        }
        let n_gt = mesh.n_vertices();
        let target_removals = (config.removal_fraction * n_gt as f64).ceil() as usize;
        // Fails early when the window cannot be filled.
        build_state(
            &initial_mesh,
            &initial,
            config.window,
            0,
            config.property_tag,
        )?;
        Ok(Problem {
            config,
            source_mesh: mesh,
            source: snaps,
            initial_mesh,
            initial,
            ground_truth,
            n_gt,
            target_removals,
        })
    }

    pub fn load(
        mesh_path: impl AsRef<Path>,
        snapshot_path: impl AsRef<Path>,
        tags: &PhysicalTags,
        config: EnvConfig,
    ) -> Result<Self, EnvError> {
        let mesh = read_msh(mesh_path, tags)?;
        let snaps = read_snapshot_file(snapshot_path, &mesh)?;
        Problem::new(mesh, snaps, config)
    }

    pub fn n_actions(&self) -> usize {
        self.config.n_actions()
    }
}

/// What an action did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionTaken {
    /// Removed window slot `slot`, the vertex with stable id `vertex_id`.
    Remove {
        slot: usize,
        vertex_id: usize,
    },
    NoRemoval,
}

#[derive(Debug, Clone)]
pub struct EpisodeState {
    pub problem: Arc<Problem>,
    pub mesh: TriMesh,
    pub snaps: SnapshotSet,
    pub forces: Forces,
    pub error: f64,
    pub removals: usize,
    pub done: bool,
    pub broken: bool,
    pub state: StateGraph,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub action: ActionTaken,
    pub reward: f64,
    pub done: bool,
    pub broken: bool,
}

impl EpisodeState {
    /// Fresh episode on the smoothed initial mesh (error exactly zero).
    pub fn reset(problem: Arc<Problem>) -> Result<Self, EnvError> {
        let cfg = problem.config;
        let state = build_state(
            &problem.initial_mesh,
            &problem.initial,
            cfg.window,
            0,
            cfg.property_tag,
        )?;
        let forces = forces(&problem.initial_mesh, &problem.initial, &cfg)?;
        let error = property_error(&problem.ground_truth, forces.get(cfg.property))?;
        Ok(EpisodeState {
            mesh: problem.initial_mesh.clone(),
            snaps: problem.initial.clone(),
            forces,
            error,
            removals: 0,
            done: false,
            broken: false,
            state,
            problem,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.mesh.n_vertices()
    }

    fn broken_step(&self, action: ActionTaken) -> (EpisodeState, StepInfo) {
        let cfg = &self.problem.config;
        let (r, _) = reward(Outcome::Broken, &cfg.reward);
        let next = EpisodeState {
            done: true,
            broken: true,
            ..self.clone()
        };
        (
            next,
            StepInfo {
                action,
                reward: r,
                done: true,
                broken: true,
            },
        )
    }

    /// Applies `action` (a window slot, or `N` for no removal) without touching `self`.
    pub fn step(&self, action: usize) -> Result<(EpisodeState, StepInfo), EnvError> {
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        let cfg = &self.problem.config;
        if action > cfg.window {
            return Err(EnvError::InvalidAction {
                action,
                max: cfg.window,
            });
        }
        if action == cfg.window {
            let taken = ActionTaken::NoRemoval;
            let (r, over) = reward(
                Outcome::Ok {
                    error: self.error,
                    removals: self.removals,
                },
                &cfg.reward,
            );
            let offset = self.state.offset + 1;
            let (state, exhausted) = match build_state(
                &self.mesh,
                &self.snaps,
                cfg.window,
                offset,
                cfg.property_tag,
            ) {
                Ok(s) => (s, false),
                Err(EnvError::InsufficientVertices { .. }) => (self.state.clone(), true),
                Err(e) => return Err(e),
            };
            let done = over || exhausted;
            let next = EpisodeState {
                state,
                done,
                ..self.clone()
            };
            return Ok((
                next,
                StepInfo {
                    action: taken,
                    reward: r,
                    done,
                    broken: false,
                },
            ));
        }

        let v = self.state.window[action];
        let taken = ActionTaken::Remove {
            slot: action,
            vertex_id: self.mesh.ids()[v],
        };
        let removed = match self.mesh.remove_vertex(v) {
            Ok(m) => m,
            Err(e) if e.is_broken() => return Ok(self.broken_step(taken)),
            Err(e) => return Err(e.into()),
        };
        let mesh = match removed.smooth(cfg.smoothing_iterations) {
            Ok(m) => m,
            Err(e) if e.is_broken() => return Ok(self.broken_step(taken)),
            Err(e) => return Err(e.into()),
        };
        let snaps = match interpolate(&self.problem.source, &self.problem.source_mesh, &mesh) {
            Ok(s) => s,
            Err(InterpError::Outside(_)) => return Ok(self.broken_step(taken)),
            Err(e) => return Err(e.into()),
        };
        let forces = forces(&mesh, &snaps, cfg)?;
        let error = property_error(&self.problem.ground_truth, forces.get(cfg.property))?;
        let removals = self.removals + 1;
        let (r, over) = reward(Outcome::Ok { error, removals }, &cfg.reward);
        let mut done = over || removals >= self.problem.target_removals;
        let state = match build_state(
            &mesh,
            &snaps,
            cfg.window,
            self.state.offset,
            cfg.property_tag,
        ) {
            Ok(s) => s,
            Err(EnvError::InsufficientVertices { .. }) => {
                done = true;
                self.state.clone()
            }
            Err(e) => return Err(e),
        };
        let next = EpisodeState {
            mesh,
            snaps,
            forces,
            error,
            removals,
            done,
            broken: false,
            state,
            problem: Arc::clone(&self.problem),
        };
        Ok((
            next,
            StepInfo {
                action: taken,
                reward: r,
                done,
                broken: false,
            },
        ))
    }
}

/// [`Environment`] adapter holding the current episode.
#[derive(Debug, Clone)]
pub struct CoarsenEnv {
    problem: Arc<Problem>,
    current: Option<EpisodeState>,
}

impl CoarsenEnv {
    pub fn new(problem: Arc<Problem>) -> Self {
        CoarsenEnv {
            problem,
            current: None,
        }
    }

    pub fn episode(&self) -> Option<&EpisodeState> {
        self.current.as_ref()
    }
}

impl Environment for CoarsenEnv {
    type Error = EnvError;

    fn n_actions(&self) -> usize {
        self.problem.n_actions()
    }

    fn reset(&mut self, _seed: u64) -> Result<GraphBatch, EnvError> {
        let ep = EpisodeState::reset(Arc::clone(&self.problem))?;
        let g = ep.state.graph.clone();
        self.current = Some(ep);
        Ok(g)
    }

    fn step(&mut self, action: usize) -> Result<Step, EnvError> {
        let ep = self.current.as_ref().ok_or(EnvError::EpisodeDone)?;
        let (next, info) = ep.step(action)?;
        let state = next.state.graph.clone();
        self.current = Some(next);
        Ok(Step {
            state,
            reward: info.reward,
            done: info.done,
        })
    }

    fn error(&self) -> Option<f64> {
        self.current.as_ref().map(|e| e.error)
    }

    fn removals(&self) -> usize {
        self.current.as_ref().map_or(0, |e| e.removals)
    }
}

/// One row of a trajectory; step 0 is the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub action: Option<ActionTaken>,
    pub error: f64,
    pub reward: Option<f64>,
    pub n_vertices: usize,
    pub drag: Vec<f64>,
    pub lift: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Rollout {
    pub records: Vec<TrajectoryRecord>,
    pub last: EpisodeState,
}

impl Rollout {
    fn start(ep: &EpisodeState) -> Self {
        Rollout {
            records: vec![record(0, None, None, ep)],
            last: ep.clone(),
        }
    }

    fn push(&mut self, next: EpisodeState, info: &StepInfo) {
        let step = self.records.len();
        self.records
            .push(record(step, Some(info.action), Some(info.reward), &next));
        self.last = next;
    }

    /// Final mesh: the last unbroken one.
    pub fn final_mesh(&self) -> &TriMesh {
        &self.last.mesh
    }

    pub fn summary(&self) -> Summary {
        let p = &self.last.problem;
        let removed = p.n_gt - self.last.n_vertices();
        Summary {
            n_initial: p.n_gt,
            n_final: self.last.n_vertices(),
            removed_percent: 100.0 * removed as f64 / p.n_gt as f64,
            error_percent: 100.0 * self.last.error,
            broken: self.last.broken,
            steps: self.records.len() - 1,
        }
    }
}

fn record(
    step: usize,
    action: Option<ActionTaken>,
    reward: Option<f64>,
    ep: &EpisodeState,
) -> TrajectoryRecord {
    TrajectoryRecord {
        step,
        action,
        error: ep.error,
        reward,
        n_vertices: ep.n_vertices(),
        drag: ep.forces.drag.clone(),
        lift: ep.forces.lift.clone(),
    }
}

/// Table-style outcome of a rollout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n_initial: usize,
    pub n_final: usize,
    pub removed_percent: f64,
    pub error_percent: f64,
    pub broken: bool,
    pub steps: usize,
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "vertices removed {:.3}% ({} -> {}), error {:.3}%",
            self.removed_percent, self.n_initial, self.n_final, self.error_percent
        )?;
        if self.broken {
            write!(f, " (ended on a broken mesh)")?;
        }
        Ok(())
    }
}

fn run_policy(
    problem: Arc<Problem>,
    mut choose: impl FnMut(&EpisodeState) -> Result<Option<(EpisodeState, StepInfo)>, EnvError>,
) -> Result<Rollout, EnvError> {
    let ep = EpisodeState::reset(problem)?;
    let mut rollout = Rollout::start(&ep);
    let mut cur = ep;
    while !cur.done {
        let Some((next, info)) = choose(&cur)? else {
            break;
        };
        // A broken step is reported but the mesh stays at the last valid state.
        let keep = if info.broken {
            EpisodeState {
                done: true,
                broken: true,
                ..cur.clone()
            }
        } else {
            next
        };
        rollout.push(keep.clone(), &info);
        cur = keep;
    }
    Ok(rollout)
}

/// Greedy (ε = 0) rollout of a trained network.
pub fn evaluate(net: &QNetwork, problem: Arc<Problem>) -> Result<Rollout, EnvError> {
    run_policy(problem, |ep| {
        let q = net.q_values(&ep.state.graph)?;
        let a = argmax(q.row(0).as_slice().expect("standard layout"));
        ep.step(a).map(Some)
    })
}

/// Uniformly random removals (never 'no removal').
pub fn random_rollout(problem: Arc<Problem>, seed: u64) -> Result<Rollout, EnvError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    run_policy(problem, |ep| {
        let a = rng.random_range(0..ep.problem.config.window);
        ep.step(a).map(Some)
    })
}

/// At each step tries every removal and keeps the one with the smallest error
/// (lowest slot on ties); broken removals count as infinite error.
pub fn greedy_rollout(problem: Arc<Problem>) -> Result<Rollout, EnvError> {
    run_policy(problem, |ep| {
        let mut best: Option<(EpisodeState, StepInfo)> = None;
        for a in 0..ep.problem.config.window {
            let (next, info) = ep.step(a)?;
            let err = if info.broken {
                f64::INFINITY
            } else {
                next.error
            };
            let better = match &best {
                None => true,
                Some((b, bi)) => err < if bi.broken { f64::INFINITY } else { b.error },
            };
            if better {
                best = Some((next, info));
            }
        }
        Ok(best)
    })
}

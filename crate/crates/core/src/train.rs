//! Parameter-server training: workers run episodes with the latest published
//! weights and send back transitions; the server owns the replay buffer and
//! the learner, and publishes a new weight snapshot after every report.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::mpsc;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    select_action, write_checkpoint, AgentError, Checkpoint, Environment, EpsilonSchedule, Learner,
    ReplayBuffer, Transition,
};
use crate::nn::QNetwork;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("episode {episode} failed {attempts} times, last error: {message}")]
    EpisodeFailed {
        episode: u64,
        attempts: u32,
        message: String,
    },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("metrics output: {0}")]
    Io(#[from] std::io::Error),
    #[error("all workers exited")]
    WorkersGone,
    #[error("greedy evaluation: {0}")]
    Evaluation(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub episodes: u64,
    pub workers: usize,
    pub seed: u64,
    pub epsilon: EpsilonSchedule,
    /// Episodes between swaps of the updated network.
    pub swap_every: u64,
    pub replay_capacity: usize,
    /// Transitions required before training starts.
    pub warmup: usize,
    pub updates_per_episode: usize,
    /// Episode horizon. The step that reaches it is stored as terminal, so
    /// values never bootstrap past the horizon.
    pub max_episode_steps: usize,
    /// Attempts per episode before a crashing worker aborts training.
    pub max_attempts: u32,
    pub checkpoint_every: u64,
    pub checkpoint_path: Option<PathBuf>,
    /// Episodes between greedy evaluations of the acting network (0 turns
    /// them off). The network with the highest greedy return is kept.
    pub eval_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: 1000,
            workers: 14,
            seed: 0,
            epsilon: EpsilonSchedule::default(),
            swap_every: 5,
            replay_capacity: 50_000,
            warmup: 500,
            updates_per_episode: 1,
            max_episode_steps: 10_000,
            max_attempts: 3,
            checkpoint_every: 0,
            checkpoint_path: None,
            eval_every: 0,
        }
    }
}

/// Immutable weights handed to workers.
#[derive(Debug)]
pub struct WeightSnapshot {
    pub version: u64,
    pub updated: usize,
    pub nets: [QNetwork; 2],
}

impl WeightSnapshot {
    /// The network workers act with: the one currently being updated.
    pub fn acting(&self) -> &QNetwork {
        &self.nets[self.updated]
    }
}

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: u64,
    pub worker: usize,
    pub weights_version: u64,
    pub epsilon: f64,
    pub steps: usize,
    pub reward: f64,
    pub final_error: Option<f64>,
    pub removals: usize,
    pub loss_mean: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub learner: Learner,
    pub metrics: Vec<EpisodeMetrics>,
    /// `(worker, version)` for every dispatch, in dispatch order.
    pub dispatch_log: Vec<(usize, u64)>,
    /// Versions in publication order.
    pub published: Vec<u64>,
    pub transitions_sent: u64,
    pub transitions_ingested: u64,
    /// Best greedy policy seen, when evaluation is on.
    pub best: Option<BestPolicy>,
}

/// Acting network with the highest greedy return among the evaluations.
#[derive(Debug, Clone, PartialEq)]
pub struct BestPolicy {
    /// Completed episodes when it was evaluated.
    pub episode: u64,
    pub reward: f64,
    pub net: QNetwork,
}

struct Dispatch {
    episode: u64,
    epsilon: f64,
    weights: Arc<WeightSnapshot>,
}

enum Report {
    Done {
        worker: usize,
        episode: u64,
        version: u64,
        epsilon: f64,
        transitions: Vec<Transition>,
        ep: EpisodeSummary,
    },
    Failed {
        worker: usize,
        episode: u64,
        message: String,
    },
}

/// Seed of episode `episode` derived from the base seed (SplitMix64 finalizer).
pub fn episode_seed(base: u64, episode: u64) -> u64 {
    let mut z = base.wrapping_add(episode.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Plays one ε-greedy episode with `net`; returns transitions and a summary.
pub fn run_episode<E: Environment>(
    env: &mut E,
    net: &QNetwork,
    epsilon: f64,
    seed: u64,
    max_steps: usize,
) -> Result<(Vec<Transition>, EpisodeSummary), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = Arc::new(env.reset(seed).map_err(|e| e.to_string())?);
    let mut transitions = Vec::new();
    let mut total = 0.0;
    for t in 1..=max_steps {
        let q = net.q_values(&state).map_err(|e| e.to_string())?;
        let action = select_action(
            q.row(0).as_slice().expect("standard layout"),
            epsilon,
            &mut rng,
        );
        let step = env.step(action).map_err(|e| e.to_string())?;
        total += step.reward;
        let next = (!step.done && t < max_steps).then(|| Arc::new(step.state));
        transitions.push(Transition {
            state,
            action,
            reward: step.reward,
            next_state: next.clone(),
        });
        match next {
            Some(n) => state = n,
            None => break,
        }
    }
    let summary = EpisodeSummary {
        steps: transitions.len(),
        reward: total,
        final_error: env.error(),
        removals: env.removals(),
    };
    Ok((transitions, summary))
}

/// Totals of one episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeSummary {
    pub steps: usize,
    pub reward: f64,
    pub final_error: Option<f64>,
    pub removals: usize,
}

fn worker_loop<E: Environment>(
    id: usize,
    base_seed: u64,
    max_steps: usize,
    make_env: &(dyn Fn(usize) -> Result<E, E::Error> + Sync),
    jobs: mpsc::Receiver<Dispatch>,
    reports: mpsc::Sender<Report>,
) {
    let mut env: Option<E> = None;
    while let Ok(job) = jobs.recv() {
        let seed = episode_seed(base_seed, job.episode);
        let result = catch_unwind(AssertUnwindSafe(|| {
            if env.is_none() {
                env = Some(make_env(id).map_err(|e| e.to_string())?);
            }
            let e = env.as_mut().expect("created above");
            run_episode(e, job.weights.acting(), job.epsilon, seed, max_steps)
        }));
        let report = match result {
            Ok(Ok((transitions, s))) => Report::Done {
                worker: id,
                episode: job.episode,
                version: job.weights.version,
                epsilon: job.epsilon,
                transitions,
                ep: s,
            },
            Ok(Err(message)) => {
                env = None;
                Report::Failed {
                    worker: id,
                    episode: job.episode,
                    message,
                }
            }
            Err(panic) => {
                env = None;
                let message = panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "worker panicked".into());
                Report::Failed {
                    worker: id,
                    episode: job.episode,
                    message,
                }
            }
        };
        if reports.send(report).is_err() {
            break;
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.workers == 0 {
            return Err(TrainError::Config("at least one worker is required".into()));
        }
        if self.replay_capacity == 0 || self.max_episode_steps == 0 || self.max_attempts == 0 {
            return Err(TrainError::Config(
                "replay capacity, step cap and attempts must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Trains `learner` on environments built by `make_env(worker_id)`, writing
/// one JSON line per ingested episode to `metrics_out`.
pub fn run_training<E, F>(
    cfg: &TrainConfig,
    mut learner: Learner,
    make_env: F,
    metrics_out: &mut dyn Write,
) -> Result<TrainOutcome, TrainError>
where
    E: Environment,
    F: Fn(usize) -> Result<E, E::Error> + Sync,
{
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut replay = ReplayBuffer::new(cfg.replay_capacity);
    let mut version = 1u64;
    let mut published = vec![version];
    let snapshot = |l: &Learner, version| {
        Arc::new(WeightSnapshot {
            version,
            updated: l.updated,
            nets: l.nets.clone(),
        })
    };
    let mut weights = snapshot(&learner, version);
    let mut metrics = Vec::new();
    let mut dispatch_log = Vec::new();
    let (mut sent, mut ingested, mut global_steps) = (0u64, 0u64, 0u64);

    let save = |l: &Learner| -> Result<(), TrainError> {
        if let Some(path) = &cfg.checkpoint_path {
            write_checkpoint(
                &Checkpoint {
                    learner: l.clone(),
                    seed: cfg.seed,
                },
                path,
            )?;
        }
        Ok(())
    };

    if cfg.episodes == 0 {
        save(&learner)?;
        return Ok(TrainOutcome {
            learner,
            metrics,
            dispatch_log,
            published,
            transitions_sent: 0,
            transitions_ingested: 0,
            best: None,
        });
    }

    let make_env = &make_env as &(dyn Fn(usize) -> Result<E, E::Error> + Sync);
    let mut best: Option<BestPolicy> = None;
    let mut eval_env: Option<E> = None;
    let mut evaluate = |l: &Learner, completed: u64| -> Result<(), TrainError> {
        let fail = |e: String| TrainError::Evaluation(e);
        if eval_env.is_none() {
            eval_env = Some(make_env(cfg.workers).map_err(|e| fail(e.to_string()))?);
        }
        let env = eval_env.as_mut().expect("created above");
        let (_, ep) =
            run_episode(env, l.q_select(), 0.0, cfg.seed, cfg.max_episode_steps).map_err(fail)?;
        log::info!(
            "greedy evaluation after {completed} episodes: reward {:.4}",
            ep.reward
        );
        if best.as_ref().is_none_or(|b| ep.reward > b.reward) {
            best = Some(BestPolicy {
                episode: completed,
                reward: ep.reward,
                net: l.q_select().clone(),
            });
        }
        Ok(())
    };
    std::thread::scope(|scope| -> Result<(), TrainError> {
        let (report_tx, report_rx) = mpsc::channel::<Report>();
        let mut job_txs = Vec::new();
        let n_workers = cfg.workers.min(cfg.episodes as usize);
        for id in 0..n_workers {
            let (tx, rx) = mpsc::channel::<Dispatch>();
            let rtx = report_tx.clone();
            job_txs.push(tx);
            let (seed, max_steps) = (cfg.seed, cfg.max_episode_steps);
            scope.spawn(move || worker_loop(id, seed, max_steps, make_env, rx, rtx));
        }
        drop(report_tx);

        let mut next_episode = 0u64;
        let mut attempts: std::collections::HashMap<u64, u32> = Default::default();
        let mut completed = 0u64;
        let dispatch = |worker: usize,
                        episode: u64,
                        weights: &Arc<WeightSnapshot>,
                        global_steps: u64,
                        log: &mut Vec<(usize, u64)>| {
            log.push((worker, weights.version));
            let job = Dispatch {
                episode,
                epsilon: cfg.epsilon.value(global_steps),
                weights: Arc::clone(weights),
            };
            let _ = job_txs[worker].send(job);
        };
        for w in 0..n_workers {
            dispatch(w, next_episode, &weights, global_steps, &mut dispatch_log);
            next_episode += 1;
        }

        while completed < cfg.episodes {
            let report = report_rx.recv().map_err(|_| TrainError::WorkersGone)?;
            match report {
                Report::Failed {
                    worker,
                    episode,
                    message,
                } => {
                    let n = attempts.entry(episode).or_insert(1);
                    log::warn!("worker {worker} failed episode {episode} (attempt {n}): {message}");
                    if *n >= cfg.max_attempts {
                        return Err(TrainError::EpisodeFailed {
                            episode,
                            attempts: *n,
                            message,
                        });
                    }
                    *n += 1;
                    dispatch(worker, episode, &weights, global_steps, &mut dispatch_log);
                }
                Report::Done {
                    worker,
                    episode,
                    version: seen,
                    epsilon,
                    transitions,
                    ep,
                } => {
                    sent += transitions.len() as u64;
                    global_steps += transitions.len() as u64;
                    for t in transitions {
                        replay.push(t);
                        ingested += 1;
                    }
                    let mut losses = Vec::new();
                    if replay.len() >= cfg.warmup.max(learner.config.batch_size) {
                        for _ in 0..cfg.updates_per_episode {
                            losses.push(learner.train_step(&replay, &mut rng)?);
                        }
                    }
                    completed += 1;
                    if cfg.swap_every > 0 && completed % cfg.swap_every == 0 {
                        learner.swap_roles();
                    }
                    if cfg.checkpoint_every > 0 && completed % cfg.checkpoint_every == 0 {
                        save(&learner)?;
                    }
                    if cfg.eval_every > 0 && completed % cfg.eval_every == 0 {
                        evaluate(&learner, completed)?;
                    }
                    version += 1;
                    published.push(version);
                    weights = snapshot(&learner, version);

                    let m = EpisodeMetrics {
                        episode,
                        worker,
                        weights_version: seen,
                        epsilon,
                        steps: ep.steps,
                        reward: ep.reward,
                        final_error: ep.final_error,
                        removals: ep.removals,
                        loss_mean: (!losses.is_empty())
                            .then(|| losses.iter().sum::<f64>() / losses.len() as f64),
                    };
                    serde_json::to_writer(&mut *metrics_out, &m).map_err(std::io::Error::from)?;
                    metrics_out.write_all(b"\n")?;
                    log::info!(
                        "episode {episode}: steps {} reward {:.4} removals {} eps {epsilon:.3}",
                        ep.steps,
                        ep.reward,
                        ep.removals
                    );
                    metrics.push(m);
                    if next_episode < cfg.episodes {
                        dispatch(
                            worker,
                            next_episode,
                            &weights,
                            global_steps,
                            &mut dispatch_log,
                        );
                        next_episode += 1;
                    }
                }
            }
        }
        drop(job_txs);
        Ok(())
    })?;
    metrics_out.flush()?;
    save(&learner)?;
    Ok(TrainOutcome {
        learner,
        metrics,
        dispatch_log,
        published,
        transitions_sent: sent,
        transitions_ingested: ingested,
        best,
    })
}

//! Double DQN: reward shaping, replay, ε-greedy selection, targets and the
//! learner that alternates which of its two networks is being updated.

mod checkpoint;
pub mod toy;

use std::sync::Arc;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{Adam, AdamConfig, GraphBatch, NnError, QNetwork, Tape};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint,
};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("ground-truth property is zero for snapshot {0}")]
    ZeroGroundTruth(usize),
    #[error("property vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("replay buffer holds {have} transitions, {need} needed")]
    InsufficientBuffer { have: usize, need: usize },
    #[error("invalid reward configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub error_threshold: f64,
    pub zero_reward_error: f64,
    pub time_factor: f64,
    pub broken_penalty: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            error_threshold: 0.001,
            zero_reward_error: 0.0005,
            time_factor: 0.005,
            broken_penalty: -1.0,
        }
    }
}

impl RewardConfig {
    /// Sharpness `K = −ln(0.5) / zero_reward_error`, so that error
    /// `zero_reward_error` scores exactly zero.
    pub fn k(&self) -> f64 {
        -(0.5f64.ln()) / self.zero_reward_error
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if !(self.zero_reward_error > 0.0 && self.zero_reward_error <= self.error_threshold) {
            return Err(AgentError::InvalidConfig(format!(
                "need 0 < zero_reward_error ({}) <= error_threshold ({})",
                self.zero_reward_error, self.error_threshold
            )));
        }
        if !self.time_factor.is_finite() || !self.broken_penalty.is_finite() {
            return Err(AgentError::InvalidConfig("non-finite reward term".into()));
        }
        Ok(())
    }

    pub fn property_reward(&self, error: f64) -> f64 {
        2.0 * (-self.k() * error).exp() - 1.0
    }
}

/// L2 norm of the per-snapshot relative errors divided by `√n`.
pub fn property_error(gt: &[f64], new: &[f64]) -> Result<f64, AgentError> {
    if gt.len() != new.len() {
        return Err(AgentError::LengthMismatch(gt.len(), new.len()));
    }
    if let Some(k) = gt.iter().position(|&g| g == 0.0) {
        return Err(AgentError::ZeroGroundTruth(k));
    }
    let sq: f64 = gt.iter().zip(new).map(|(g, n)| ((g - n) / g).powi(2)).sum();
    Ok((sq / gt.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    Broken,
    Ok { error: f64, removals: usize },
}

/// Reward and whether the error threshold (or a broken mesh) ends the episode.
pub fn reward(outcome: Outcome, cfg: &RewardConfig) -> (f64, bool) {
    match outcome {
        Outcome::Broken => (cfg.broken_penalty, true),
        Outcome::Ok { error, removals } => {
            let r = cfg.property_reward(error) + cfg.time_factor * removals as f64;
            (r, error > cfg.error_threshold)
        }
    }
}

/// Lowest index among the maxima.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Uniform over all actions with probability `epsilon`, else the greedy action.
pub fn select_action(q: &[f64], epsilon: f64, rng: &mut impl Rng) -> usize {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        rng.random_range(0..q.len())
    } else {
        argmax(q)
    }
}

/// Linear decay from `start` to `end` over `decay_steps` global steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule {
            start: 1.0,
            end: 0.05,
            decay_steps: 10_000,
        }
    }
}

impl EpsilonSchedule {
    pub fn value(&self, step: u64) -> f64 {
        if self.decay_steps == 0 || step >= self.decay_steps {
            return self.end;
        }
        self.start + (self.end - self.start) * step as f64 / self.decay_steps as f64
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: GraphBatch,
    pub reward: f64,
    pub done: bool,
}

/// Episodic environment whose states are graphs.
pub trait Environment {
    type Error: std::error::Error + Send + Sync + 'static;

    fn n_actions(&self) -> usize;

    /// Starts an episode; `seed` covers any randomness in the initial state.
    fn reset(&mut self, seed: u64) -> Result<GraphBatch, Self::Error>;

    fn step(&mut self, action: usize) -> Result<Step, Self::Error>;

    /// Current property error, if the environment tracks one.
    fn error(&self) -> Option<f64> {
        None
    }

    /// Vertices removed so far in the episode.
    fn removals(&self) -> usize {
        0
    }
}

/// `(s, a, r, s')`; `next_state` is `None` for terminal transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Arc<GraphBatch>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Option<Arc<GraphBatch>>,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
    pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            items: Vec::with_capacity(capacity.min(4096)),
            next: 0,
            pushed: 0,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
        self.pushed += 1;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total transitions ever pushed.
    pub fn pushed(&self) -> u64 {
        self.pushed
    }

    /// Distinct transitions drawn uniformly.
    pub fn sample(&self, batch: usize, rng: &mut impl Rng) -> Result<Vec<&Transition>, AgentError> {
        if self.items.len() < batch {
            return Err(AgentError::InsufficientBuffer {
                have: self.items.len(),
                need: batch,
            });
        }
        Ok(sample(rng, self.items.len(), batch)
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }
}

/// `r + γ·q_eval(s')[argmax q_select(s')]`, or `r` for terminal transitions.
/// `next_select`/`next_eval` hold one row per non-terminal transition, in order.
pub fn double_dqn_target(
    rewards: &[f64],
    terminal: &[bool],
    next_select: &Array2<f64>,
    next_eval: &Array2<f64>,
    gamma: f64,
) -> Vec<f64> {
    let mut row = 0;
    rewards
        .iter()
        .zip(terminal)
        .map(|(&r, &term)| {
            if term {
                r
            } else {
                let a = argmax(next_select.row(row).as_slice().expect("standard layout"));
                let y = r + gamma * next_eval[[row, a]];
                row += 1;
                y
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub gamma: f64,
    pub batch_size: usize,
    pub huber_delta: f64,
    pub adam: AdamConfig,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            gamma: 1.0,
            batch_size: 32,
            huber_delta: 1.0,
            adam: AdamConfig::default(),
        }
    }
}

/// Two Q-networks with their optimizers; `updated` names the one currently
/// trained (it selects actions in the target), the other evaluates.
#[derive(Debug, Clone, PartialEq)]
pub struct Learner {
    pub config: LearnerConfig,
    pub nets: [QNetwork; 2],
    pub optimizers: [Adam; 2],
    pub updated: usize,
}

impl Learner {
    pub fn new(config: LearnerConfig, a: QNetwork, b: QNetwork) -> Self {
        let optimizers = [
            Adam::new(config.adam, &a.params),
            Adam::new(config.adam, &b.params),
        ];
        Learner {
            config,
            nets: [a, b],
            optimizers,
            updated: 0,
        }
    }

    pub fn q_select(&self) -> &QNetwork {
        &self.nets[self.updated]
    }

    pub fn q_eval(&self) -> &QNetwork {
        &self.nets[1 - self.updated]
    }

    pub fn swap_roles(&mut self) {
        self.updated = 1 - self.updated;
    }

    /// One Adam step of the updated network on a uniformly sampled batch; returns the Huber loss.
    pub fn train_step(
        &mut self,
        buffer: &ReplayBuffer,
        rng: &mut impl Rng,
    ) -> Result<f64, AgentError> {
        let batch = buffer.sample(self.config.batch_size, rng)?;
        self.train_on(&batch)
    }

    pub fn train_on(&mut self, batch: &[&Transition]) -> Result<f64, AgentError> {
        let states: Vec<&GraphBatch> = batch.iter().map(|t| t.state.as_ref()).collect();
        let next: Vec<&GraphBatch> = batch
            .iter()
            .filter_map(|t| t.next_state.as_deref())
            .collect();
        let terminal: Vec<bool> = batch.iter().map(|t| t.next_state.is_none()).collect();
        let rewards: Vec<f64> = batch.iter().map(|t| t.reward).collect();
        let targets = if next.is_empty() {
            rewards
        } else {
            let nb = GraphBatch::concat(&next)?;
            let sel = self.q_select().q_values(&nb)?;
            let ev = self.q_eval().q_values(&nb)?;
            double_dqn_target(&rewards, &terminal, &sel, &ev, self.config.gamma)
        };
        let net = &self.nets[self.updated];
        let mut tape = Tape::new();
        let q = net.forward(&mut tape, &GraphBatch::concat(&states)?)?;
        let taken = tape.pick(q, batch.iter().map(|t| t.action).collect())?;
        let loss = tape.huber_mean(taken, targets, self.config.huber_delta)?;
        let value = tape.value(loss)[[0, 0]];
        let grads = tape.backward(loss, &net.params)?;
        let u = self.updated;
        self.optimizers[u].update(&mut self.nets[u].params, &grads);
        Ok(value)
    }
}

//! Five-state chain for sanity checks of the learner.
//!
//! In state `s`, action 0 stops with reward `STOP_REWARDS[s]`; action 1 moves
//! to `s + 1` with reward 0 (from the last state it ends the episode with 0).
//! States are one-node graphs with one-hot features.

use std::convert::Infallible;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Environment, Step};
use crate::nn::{Graph, GraphBatch};

pub const N_STATES: usize = 5;
pub const STOP_REWARDS: [f64; N_STATES] = [0.2, 0.9, 0.1, 0.3, 0.8];

pub fn state_graph(s: usize) -> GraphBatch {
    let mut x = Array2::zeros((1, N_STATES));
    if s < N_STATES {
        x[[0, s]] = 1.0;
    }
    GraphBatch::new(x, Graph::single(1, vec![], vec![]).expect("one node")).expect("one row")
}

#[derive(Debug, Clone, Default)]
pub struct ToyEnv {
    state: usize,
}

impl ToyEnv {
    pub fn new() -> Self {
        ToyEnv::default()
    }

    pub fn state(&self) -> usize {
        self.state
    }

    /// Deterministic transition: `(next state or None if terminal, reward)`.
    pub fn transition(s: usize, action: usize) -> (Option<usize>, f64) {
        match action {
            0 => (None, STOP_REWARDS[s]),
            _ if s + 1 < N_STATES => (Some(s + 1), 0.0),
            _ => (None, 0.0),
        }
    }
}

impl Environment for ToyEnv {
    type Error = Infallible;

    fn n_actions(&self) -> usize {
        2
    }

    /// The start state is uniform so every state gets visited.
    fn reset(&mut self, seed: u64) -> Result<GraphBatch, Infallible> {
        self.state = ChaCha8Rng::seed_from_u64(seed).random_range(0..N_STATES);
        Ok(state_graph(self.state))
    }

    fn step(&mut self, action: usize) -> Result<Step, Infallible> {
        let (next, reward) = ToyEnv::transition(self.state, action);
        match next {
            Some(s) => {
                self.state = s;
                Ok(Step {
                    state: state_graph(s),
                    reward,
                    done: false,
                })
            }
            None => Ok(Step {
                state: state_graph(self.state),
                reward,
                done: true,
            }),
        }
    }
}

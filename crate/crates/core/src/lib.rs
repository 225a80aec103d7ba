//! Mesh coarsening driven by a double deep-Q agent on graph states.
//!
//! The crate is organised bottom-up:
//!
//! * [`mesh`]: triangular meshes, MSH I/O, vertex removal and smoothing;
//! * [`interp`]: finite-element snapshots and mesh-to-mesh interpolation;
//! * [`flow`]: boundary stress integrals (drag, lift) and analytic fields;
//! * [`nn`]: a small reverse-mode kernel with graph layers and Adam;
//! * [`agent`]: rewards, replay and double-DQN updates;
//! * [`env`]: the coarsening environment, evaluation and baselines;
//! * [`train`]: the worker/parameter-server training loop;
//! * [`config`]: run configuration.

pub mod agent;
pub mod config;
pub mod env;
pub mod flow;
pub mod interp;
pub mod mesh;
pub mod nn;
pub mod train;

//! Run configuration: one TOML document with a section per concern. Every
//! field has a default, so an empty file gives the reference settings.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{EpsilonSchedule, Learner, LearnerConfig, RewardConfig};
use crate::env::EnvConfig;
use crate::flow::{FluidConstants, PropertyKind};
use crate::interp::VelocityOrder;
use crate::mesh::msh::PhysicalTags;
use crate::mesh::BoundaryTag;
use crate::nn::{AdamConfig, NetworkConfig, NnError, QNetwork};
use crate::train::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("writing config: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub mesh: Option<PathBuf>,
    pub snapshots: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            mesh: None,
            snapshots: None,
            out: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvironmentSection {
    pub window: usize,
    pub removal_fraction: f64,
    pub smoothing_iterations: usize,
    pub n_snapshots: usize,
    pub velocity_order: VelocityOrder,
    pub property_tag: BoundaryTag,
    pub property: PropertyKind,
}

impl Default for EnvironmentSection {
    fn default() -> Self {
        let env = EnvConfig::default();
        EnvironmentSection {
            window: env.window,
            removal_fraction: env.removal_fraction,
            smoothing_iterations: env.smoothing_iterations,
            n_snapshots: 5,
            velocity_order: VelocityOrder::P2,
            property_tag: env.property_tag,
            property: env.property,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub width: usize,
    pub sage_layers: usize,
    pub gcn_layers: usize,
    pub topk_ratio: f64,
    pub xavier_gain: f64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            width: 128,
            sage_layers: 3,
            gcn_layers: 3,
            topk_ratio: 0.5,
            xavier_gain: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub lr: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub huber_delta: f64,
    pub workers: usize,
    pub episodes: u64,
    pub seed: u64,
    pub epsilon: EpsilonSchedule,
    pub swap_every: u64,
    pub replay_capacity: usize,
    pub warmup: usize,
    pub updates_per_episode: usize,
    pub max_episode_steps: usize,
    pub max_attempts: u32,
    pub checkpoint_every: u64,
    pub eval_every: u64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        let l = LearnerConfig::default();
        TrainingSection {
            lr: l.adam.lr,
            gamma: l.gamma,
            batch_size: l.batch_size,
            huber_delta: l.huber_delta,
            workers: t.workers,
            episodes: t.episodes,
            seed: t.seed,
            epsilon: t.epsilon,
            swap_every: t.swap_every,
            replay_capacity: t.replay_capacity,
            warmup: t.warmup,
            updates_per_episode: t.updates_per_episode,
            max_episode_steps: t.max_episode_steps,
            max_attempts: t.max_attempts,
            checkpoint_every: t.checkpoint_every,
            eval_every: t.eval_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub environment: EnvironmentSection,
    pub reward: RewardConfig,
    pub network: NetworkSection,
    pub training: TrainingSection,
    pub fluid: FluidConstants,
    pub tags: PhysicalTags,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.env_config().validate().map_err(|e| invalid(&e))?;
        self.train_config(None)
            .validate()
            .map_err(|e| invalid(&e))?;
        FluidConstants::new(self.fluid.density, self.fluid.viscosity).map_err(|e| invalid(&e))?;
        let n = &self.network;
        if n.width == 0 || n.sage_layers + n.gcn_layers == 0 {
            return Err(ConfigError::Invalid(
                "network needs a graph layer and a positive width".into(),
            ));
        }
        if !(n.topk_ratio > 0.0 && n.topk_ratio <= 1.0) {
            return Err(ConfigError::Invalid(format!(
                "topk_ratio {} outside (0, 1]",
                n.topk_ratio
            )));
        }
        let t = &self.training;
        if !(t.lr > 0.0) || !(0.0..=1.0).contains(&t.gamma) || t.batch_size == 0 {
            return Err(ConfigError::Invalid(
                "lr must be positive, gamma in [0, 1], batch non-empty".into(),
            ));
        }
        if self.environment.n_snapshots == 0 {
            return Err(ConfigError::Invalid(
                "at least one snapshot is required".into(),
            ));
        }
        Ok(())
    }

    pub fn env_config(&self) -> EnvConfig {
        let e = &self.environment;
        EnvConfig {
            window: e.window,
            removal_fraction: e.removal_fraction,
            smoothing_iterations: e.smoothing_iterations,
            property_tag: e.property_tag,
            property: e.property,
            reward: self.reward,
            fluid: self.fluid,
        }
    }

    /// Network shape for states carrying `n_snapshots` snapshots.
    pub fn network_config(&self, n_snapshots: usize) -> NetworkConfig {
        NetworkConfig {
            in_features: 2 + 3 * n_snapshots,
            width: self.network.width,
            n_sage: self.network.sage_layers,
            n_gcn: self.network.gcn_layers,
            topk_ratio: self.network.topk_ratio,
            n_actions: self.environment.window + 1,
        }
    }

    pub fn learner_config(&self) -> LearnerConfig {
        let t = &self.training;
        LearnerConfig {
            gamma: t.gamma,
            batch_size: t.batch_size,
            huber_delta: t.huber_delta,
            adam: AdamConfig {
                lr: t.lr,
                ..AdamConfig::default()
            },
        }
    }

    pub fn train_config(&self, checkpoint_path: Option<PathBuf>) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            episodes: t.episodes,
            workers: t.workers,
            seed: t.seed,
            epsilon: t.epsilon,
            swap_every: t.swap_every,
            replay_capacity: t.replay_capacity,
            warmup: t.warmup,
            updates_per_episode: t.updates_per_episode,
            max_episode_steps: t.max_episode_steps,
            max_attempts: t.max_attempts,
            checkpoint_every: t.checkpoint_every,
            checkpoint_path,
            eval_every: t.eval_every,
        }
    }

    /// Two freshly initialized networks drawn from the training seed.
    pub fn new_learner(&self, n_snapshots: usize) -> Result<Learner, NnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.training.seed);
        let net = self.network_config(n_snapshots);
        let gain = self.network.xavier_gain;
        let a = QNetwork::new(net, gain, &mut rng)?;
        let b = QNetwork::new(net, gain, &mut rng)?;
        Ok(Learner::new(self.learner_config(), a, b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_reference_settings() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.environment.window, 180);
        assert_eq!(cfg.environment.removal_fraction, 0.05);
        assert_eq!(cfg.environment.smoothing_iterations, 50);
        assert_eq!(cfg.environment.n_snapshots, 5);
        assert_eq!(cfg.environment.velocity_order, VelocityOrder::P2);
        assert_eq!(cfg.reward.error_threshold, 0.001);
        assert_eq!(cfg.reward.zero_reward_error, 0.0005);
        assert_eq!(cfg.reward.time_factor, 0.005);
        assert_eq!(
            cfg.network,
            NetworkSection {
                width: 128,
                sage_layers: 3,
                gcn_layers: 3,
                topk_ratio: 0.5,
                xavier_gain: 0.9
            }
        );
        assert_eq!(cfg.training.lr, 0.0005);
        assert_eq!(cfg.training.gamma, 1.0);
        assert_eq!(cfg.training.workers, 14);
        assert_eq!(cfg.training.swap_every, 5);
        assert_eq!(cfg.training.batch_size, 32);
        assert_eq!(cfg.training.replay_capacity, 50_000);
        assert_eq!(
            cfg.fluid,
            FluidConstants {
                density: 1.0,
                viscosity: 0.001
            }
        );
        assert_eq!(cfg.network_config(5).in_features, 17);
        assert_eq!(cfg.network_config(5).n_actions, 181);
    }

    #[test]
    fn round_trip() {
        let mut cfg = RunConfig::default();
        cfg.paths.mesh = Some("a/mesh.msh".into());
        cfg.environment.property = PropertyKind::Lift;
        cfg.environment.velocity_order = VelocityOrder::P1;
        cfg.training.epsilon.decay_steps = 77;
        cfg.training.seed = u64::MAX >> 12;
        cfg.fluid.viscosity = 0.0123456789012345;
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_override_and_rejections() {
        let cfg =
            RunConfig::from_toml_str("[network]\nwidth = 16\n[training]\nworkers = 2\n").unwrap();
        assert_eq!(cfg.network.width, 16);
        assert_eq!(cfg.network.gcn_layers, 3);
        assert_eq!(cfg.training.workers, 2);
        assert!(RunConfig::from_toml_str("[network]\nwidht = 16\n").is_err());
        assert!(RunConfig::from_toml_str("[training]\nworkers = 0\n").is_err());
        assert!(RunConfig::from_toml_str("[environment]\nvelocity_order = 3\n").is_err());
        assert!(RunConfig::from_toml_str("[environment]\nproperty_tag = \"interior\"\n").is_err());
    }
}

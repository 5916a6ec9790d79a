//! Goal-conditioned pick-and-place with engineered rewards.
//!
//! The crate bundles a kinematic pick-and-place world ([`env`]), four reward
//! functions ([`rewards`]), a small dense-network toolkit ([`nn`]), a
//! hindsight replay buffer ([`replay`]), a DDPG learner ([`agent`]), the
//! training loop ([`trainer`]) and trajectory diagnostics ([`analysis`]).

pub mod agent;
pub mod analysis;
pub mod env;
pub mod error;
pub mod nn;
pub mod replay;
pub mod rewards;
pub mod rng;
pub mod rollout;
pub mod trainer;
pub mod vec3;

pub use agent::{DdpgAgent, DdpgHyper, Normalizer};
pub use analysis::{EpisodeTrace, Subject, TrajectoryReport};
pub use env::{Action, Env, EnvConfig, EnvState, Observation, Task};
pub use error::{Error, Result};
pub use nn::{Activation, AdamState, Mlp};
pub use replay::{RelabelKind, RelabelStrategy, ReplayBuffer, Transition};
pub use rewards::{RewardInput, RewardKind, RewardSpec, Shaping};
pub use rollout::{Policy, RecordedEpisode};
pub use trainer::{RunMetrics, TrainConfig};
pub use vec3::Vec3;

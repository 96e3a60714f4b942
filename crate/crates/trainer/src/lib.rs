//! Clipped-PPO training of the dispatch actor-critic.

pub mod config;
pub mod error;
pub mod gae;
pub mod policy;
pub mod ppo;
pub mod rollout;
pub mod train;

pub use config::{CriticTarget, TrainConfig};
pub use error::{Error, Result};
pub use policy::D2snPolicy;
pub use ppo::{Adam, Sample, UpdateDiagnostics};
pub use rollout::{Trajectory, Transition};
pub use train::{CurveRecord, Trainer};

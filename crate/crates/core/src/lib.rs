//! Batch-mode ride-hailing dispatch: domain model, synthetic scenarios, a
//! discrete-time simulator, the two-layer decision environment and the
//! classical matching baselines.

pub mod domain;
pub mod env;
pub mod error;
pub mod matching;
pub mod policy;
pub mod scenario;
pub mod sim;

pub use domain::{DriverId, EpisodeConfig, Location, OdPair, Order, OrderId, RewardMode};
pub use env::{BatchDecision, BatchPolicy, Env, OuterState, SubAction, SubState};
pub use error::{Error, Result};
pub use scenario::{CapacityBin, Dataset, Level, ScenarioSpec};
pub use sim::{MetricsReport, SimState};

use micod_core::env::{Env, OuterState, SubAction};
use micod_core::sim::MetricsReport;
use micod_core::{Dataset, RewardMode};
use micod_d2sn::D2sn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::Result;

/// One outer batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: OuterState,
    pub steps: Vec<SubAction>,
    pub reward: f64,
    /// Total log-probability of `steps` under the sampling parameters.
    pub log_prob: f64,
    /// `log_prob` without the forced hold at an exhausted pool.
    pub free_log_prob: f64,
    /// Critic value of `state` under the sampling parameters.
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// Every batch of the episode, in order; the last one is terminal.
    pub transitions: Vec<Transition>,
    pub episode_return: f64,
    pub metrics: MetricsReport,
}

impl Trajectory {
    pub fn rewards(&self) -> Vec<f64> {
        self.transitions.iter().map(|t| t.reward).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.transitions.iter().map(|t| t.value).collect()
    }
}

/// Decorrelated 64-bit seed for stream `(a, b)`.
pub fn derive_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Runs one episode with actions sampled from `net`. The environment and
/// the sampler are both seeded from `seed`.
pub fn rollout_episode(net: &D2sn, dataset: &Dataset, mode: RewardMode, exhaustive: bool, seed: u64) -> Result<Trajectory> {
    let mut env = Env::reset(dataset, mode, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let mut transitions = Vec::with_capacity(dataset.config.n_batches());
    let mut episode_return = 0.0;
    loop {
        let state = env.state().clone();
        let action = net.sample_action(&state, &mut rng, false, exhaustive)?;
        let value = net.critic_value(&state)?;
        let result = env.finalize_batch(&action.decision)?;
        episode_return += result.reward;
        transitions.push(Transition { state, steps: action.steps, reward: result.reward, log_prob: action.log_prob, free_log_prob: action.free_log_prob, value });
        if result.done {
            break;
        }
    }
    Ok(Trajectory { transitions, episode_return, metrics: env.metrics() })
}

/// Independent episodes `(dataset, seed)`, run in parallel; output order matches input.
pub fn collect_rollouts(
    net: &D2sn,
    jobs: &[(&Dataset, u64)],
    mode: RewardMode,
    exhaustive: bool,
) -> Result<Vec<Trajectory>> {
    jobs.par_iter().map(|&(ds, seed)| rollout_episode(net, ds, mode, exhaustive, seed)).collect()
}

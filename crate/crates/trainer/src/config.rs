use micod_core::RewardMode;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regression target for the critic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticTarget {
    /// `Â_t + V_old(s_t)`, the usual GAE return.
    Current,
    /// `Â_t + V_old(s_{t+1})`, with 0 after the last batch.
    Next,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip_eps: f64,
    pub lr: f64,
    /// Value-network learning rate; `None` uses `lr`.
    pub critic_lr: Option<f64>,
    pub epochs: usize,
    /// Transitions per gradient step.
    pub minibatch_size: usize,
    pub iterations: usize,
    pub episodes_per_iteration: usize,
    pub entropy_coef: f64,
    /// Per-network gradient-norm cap; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
    pub normalize_advantages: bool,
    pub critic_target: CriticTarget,
    pub reward_mode: RewardMode,
    /// Whether the forced hold that closes an exhausted pool counts in the
    /// probability ratio. Off by default: that factor is not a choice, and
    /// pushing on it drags the free hold decisions along.
    pub forced_hold_in_ratio: bool,
    /// Train the variant without the hold head.
    pub exhaustive: bool,
    pub seed: u64,
    /// Rollout and gradient fan-out; results do not depend on it.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip_eps: 0.2,
            lr: 0.002,
            critic_lr: None,
            epochs: 4,
            minibatch_size: 64,
            iterations: 100,
            episodes_per_iteration: 4,
            entropy_coef: 0.01,
            max_grad_norm: Some(0.5),
            normalize_advantages: true,
            critic_target: CriticTarget::Current,
            reward_mode: RewardMode::Tdi,
            forced_hold_in_ratio: false,
            exhaustive: false,
            seed: 0,
            workers: 1,
        }
    }
}

impl TrainConfig {
    /// Learning rate suggested for small networks when the default diverges.
    pub const DESK_LR: f64 = 3e-4;

    pub fn critic_lr(&self) -> f64 {
        self.critic_lr.unwrap_or(self.lr)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return bad("gamma and lambda must lie in [0, 1]");
        }
        if !(self.clip_eps > 0.0) {
            return bad("clip range must be positive");
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return bad("learning rate must be finite and non-negative");
        }
        if self.critic_lr.is_some_and(|r| !(r >= 0.0) || !r.is_finite()) {
            return bad("critic learning rate must be finite and non-negative");
        }
        if self.epochs == 0 || self.minibatch_size == 0 || self.episodes_per_iteration == 0 {
            return bad("epochs, minibatch size and episodes per iteration must be positive");
        }
        if self.max_grad_norm.is_some_and(|c| !(c > 0.0)) {
            return bad("gradient-norm cap must be positive");
        }
        if !(self.entropy_coef >= 0.0) {
            return bad("entropy coefficient must be non-negative");
        }
        Ok(())
    }
}

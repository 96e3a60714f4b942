//! Clipped-surrogate policy optimization over whole batch actions.
//!
//! Every outer batch is one transition: its sub-actions share the batch
//! reward and one advantage, and the probability ratio is taken over the
//! product of the sub-action probabilities.

use std::fs;
use std::path::Path;

use micod_core::env::{OuterState, SubAction};
use micod_d2sn::checkpoint::{read_tensors, write_tensors};
use micod_d2sn::{D2sn, Matrix, ParamStore, PolicyEval, Tape, Var};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::gae::{compute_gae, normalize, value_targets};
use crate::rollout::Trajectory;

/// Adaptive-moment optimizer state, with one learning rate per tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    rates: Vec<f64>,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

/// Tensors of the value network carry this name prefix.
const CRITIC_PREFIX: &str = "critic.";

impl Adam {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        let zeros = || params.tensors().iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, rates: vec![lr; params.len()], m: zeros(), v: zeros() }
    }

    /// Separate rates for the policy and the value network.
    pub fn split(params: &ParamStore, actor_lr: f64, critic_lr: f64) -> Self {
        let mut adam = Self::new(params, actor_lr);
        for (i, r) in adam.rates.iter_mut().enumerate() {
            if params.name(i).starts_with(CRITIC_PREFIX) {
                *r = critic_lr;
            }
        }
        adam
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Matrix]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, g) in grads.iter().enumerate() {
            let lr = self.rates[i];
            let p = params.get_mut(i).data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for k in 0..g.len() {
                let gk = g.data()[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let t = Matrix::from_vec(1, 1, vec![self.t as f64]);
        let rates = Matrix::row_vector(self.rates.clone());
        let mut named: Vec<(String, &Matrix)> = vec![("t".into(), &t), ("lr".into(), &rates)];
        for (i, (m, v)) in self.m.iter().zip(&self.v).enumerate() {
            named.push((format!("m.{i}"), m));
            named.push((format!("v.{i}"), v));
        }
        let mut buf = Vec::new();
        write_tensors(&mut buf, named.iter().map(|(n, m)| (n.as_str(), *m)))?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, params: &ParamStore) -> Result<Self> {
        let bytes = fs::read(path)?;
        let tensors = read_tensors(&mut bytes.as_slice())?;
        let bad = |m: &str| Error::Resume(format!("optimizer state: {m}"));
        if tensors.len() != 2 + 2 * params.len() || tensors[1].1.shape() != (1, params.len()) {
            return Err(bad("tensor count does not match the network"));
        }
        let mut adam = Adam::new(params, 0.0);
        adam.t = tensors[0].1.get(0, 0) as u64;
        adam.rates = tensors[1].1.data().to_vec();
        for i in 0..params.len() {
            let (m, v) = (&tensors[2 + 2 * i].1, &tensors[3 + 2 * i].1);
            if m.shape() != params.get(i).shape() || v.shape() != params.get(i).shape() {
                return Err(bad("moment shape mismatch"));
            }
            adam.m[i] = m.clone();
            adam.v[i] = v.clone();
        }
        Ok(adam)
    }
}

/// A transition prepared for the update.
#[derive(Clone, Debug)]
pub struct Sample {
    pub state: OuterState,
    pub steps: Vec<SubAction>,
    pub old_log_prob: f64,
    pub advantage: f64,
    pub target: f64,
}

impl Sample {
    /// Batches with an empty pool carry no decision and only train the critic.
    pub fn has_decision(&self) -> bool {
        !self.state.pairs.is_empty()
    }
}

/// GAE per episode, critic targets from the raw advantages, then
/// (optionally) advantage normalization across every decision sample.
pub fn build_samples(trajectories: &[Trajectory], cfg: &TrainConfig) -> Result<Vec<Sample>> {
    let mut samples = Vec::new();
    for traj in trajectories {
        let values = traj.values();
        let adv = compute_gae(&traj.rewards(), &values, cfg.gamma, cfg.lambda)?;
        let targets = value_targets(&adv, &values, cfg.critic_target);
        for ((t, a), target) in traj.transitions.iter().zip(adv).zip(targets) {
            samples.push(Sample {
                state: t.state.clone(),
                steps: t.steps.clone(),
                old_log_prob: if cfg.forced_hold_in_ratio { t.log_prob } else { t.free_log_prob },
                advantage: a,
                target,
            });
        }
    }
    if cfg.normalize_advantages {
        let idx: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].has_decision()).collect();
        let mut adv: Vec<f64> = idx.iter().map(|&i| samples[i].advantage).collect();
        normalize(&mut adv);
        for (&i, a) in idx.iter().zip(adv) {
            samples[i].advantage = a;
        }
    }
    Ok(samples)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct UpdateDiagnostics {
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub actor_grad_norm: f64,
    pub critic_grad_norm: f64,
    pub actor_samples: usize,
    pub critic_samples: usize,
    pub minibatches: usize,
}

/// Clipped surrogate `min(r·Â, clip(r, 1−ε, 1+ε)·Â)` and its derivative in
/// `log r` (zero when the clipped branch is the active minimum).
pub fn clipped_objective(ratio: f64, advantage: f64, eps: f64) -> (f64, f64, bool) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * advantage;
    if clipped < unclipped {
        (clipped, 0.0, true)
    } else {
        (unclipped, unclipped, false)
    }
}

/// Probability ratios of every decision sample under the current parameters.
pub fn replay_ratios(net: &D2sn, samples: &[Sample], cfg: &TrainConfig) -> Result<Vec<f64>> {
    samples
        .par_iter()
        .filter(|s| s.has_decision())
        .map(|s| {
            let mut tape = Tape::new();
            let eval = net.evaluate(&mut tape, &s.state, &s.steps, cfg.exhaustive)?;
            Ok((tape.scalar(ratio_log_prob(&eval, cfg)) - s.old_log_prob).exp())
        })
        .collect()
}

fn ratio_log_prob(eval: &PolicyEval, cfg: &TrainConfig) -> Var {
    if cfg.forced_hold_in_ratio {
        eval.log_prob
    } else {
        eval.free_log_prob
    }
}

struct ActorPart {
    grads: Vec<Matrix>,
    ratio: f64,
    objective: f64,
    clipped: bool,
    entropy: f64,
    log_ratio: f64,
}

fn sum_grads(net: &D2sn, parts: impl Iterator<Item = Vec<Matrix>>) -> Vec<Matrix> {
    let mut acc: Vec<Matrix> = net.params().tensors().iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
    for g in parts {
        for (a, b) in acc.iter_mut().zip(&g) {
            a.add_assign(b);
        }
    }
    acc
}

fn norm(grads: &[Matrix]) -> f64 {
    grads.iter().map(Matrix::sum_sq).sum::<f64>().sqrt()
}

fn clip_norm(grads: &mut [Matrix], cap: Option<f64>) -> f64 {
    let n = norm(grads);
    if let Some(c) = cap {
        if n > c {
            for g in grads.iter_mut() {
                g.scale_assign(c / n);
            }
        }
    }
    n
}

fn scalar(v: f64) -> Matrix {
    Matrix::from_vec(1, 1, vec![v])
}

/// `cfg.epochs` passes of shuffled minibatch updates over `samples`.
pub fn ppo_update(
    net: &mut D2sn,
    adam: &mut Adam,
    samples: &[Sample],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateDiagnostics> {
    let mut d = UpdateDiagnostics::default();
    let (mut ratio_sum, mut clipped, mut kl_sum, mut obj_sum, mut ent_sum, mut vloss_sum) = (0.0, 0, 0.0, 0.0, 0.0, 0.0);
    let (mut actor_evals, mut critic_evals, mut steps) = (0usize, 0usize, 0usize);
    let (mut actor_norm_sum, mut critic_norm_sum) = (0.0, 0.0);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let deciding: Vec<&Sample> = batch.iter().copied().filter(|s| s.has_decision()).collect();
            let net_ref: &D2sn = net;

            let n_actor = deciding.len().max(1) as f64;
            let actor: Vec<ActorPart> = deciding
                .par_iter()
                .map(|s| -> Result<ActorPart> {
                    let mut tape = Tape::new();
                    let eval = net_ref.evaluate(&mut tape, &s.state, &s.steps, cfg.exhaustive)?;
                    let lp_var = ratio_log_prob(&eval, cfg);
                    let lp = tape.scalar(lp_var);
                    let entropy = tape.scalar(eval.entropy);
                    let log_ratio = lp - s.old_log_prob;
                    let ratio = log_ratio.exp();
                    let (objective, d_obj, is_clipped) = clipped_objective(ratio, s.advantage, cfg.clip_eps);
                    // Loss = −objective − c·entropy, averaged over the minibatch.
                    let seeds = [
                        (lp_var, scalar(-d_obj / n_actor)),
                        (eval.entropy, scalar(-cfg.entropy_coef / n_actor)),
                    ];
                    let grads = net_ref.dense_grads(&tape.backward(&seeds));
                    Ok(ActorPart { grads, ratio, objective, clipped: is_clipped, entropy, log_ratio })
                })
                .collect::<Result<_>>()?;

            let n_critic = batch.len().max(1) as f64;
            let critic: Vec<(Vec<Matrix>, f64)> = batch
                .par_iter()
                .map(|s| -> Result<(Vec<Matrix>, f64)> {
                    let mut tape = Tape::new();
                    let v = net_ref.critic_on_tape(&mut tape, &s.state)?;
                    let err = tape.scalar(v) - s.target;
                    // Loss = ½ (V − target)², averaged.
                    let grads = net_ref.dense_grads(&tape.backward(&[(v, scalar(err / n_critic))]));
                    Ok((grads, 0.5 * err * err))
                })
                .collect::<Result<_>>()?;

            for a in &actor {
                ratio_sum += a.ratio;
                clipped += usize::from(a.clipped);
                kl_sum += -a.log_ratio;
                obj_sum += a.objective;
                ent_sum += a.entropy;
            }
            vloss_sum += critic.iter().map(|c| c.1).sum::<f64>();
            actor_evals += actor.len();
            critic_evals += critic.len();

            let mut ga = sum_grads(net, actor.into_iter().map(|a| a.grads));
            let mut gc = sum_grads(net, critic.into_iter().map(|c| c.0));
            let an = clip_norm(&mut ga, cfg.max_grad_norm);
            let cn = clip_norm(&mut gc, cfg.max_grad_norm);
            actor_norm_sum += an;
            critic_norm_sum += cn;
            if !(an.is_finite() && cn.is_finite() && obj_sum.is_finite() && vloss_sum.is_finite()) {
                d.actor_grad_norm = an;
                d.critic_grad_norm = cn;
                d.policy_loss = -obj_sum;
                d.value_loss = vloss_sum;
                let dump = serde_json::to_string(&d).unwrap_or_default();
                return Err(Error::NonFinite { what: "loss or gradient", dump });
            }
            for (a, c) in ga.iter_mut().zip(&gc) {
                a.add_assign(c);
            }
            adam.step(net.params_mut(), &ga);
            steps += 1;
        }
    }
    let per = |x: f64, n: usize| if n == 0 { 0.0 } else { x / n as f64 };
    d.mean_ratio = per(ratio_sum, actor_evals);
    d.clip_fraction = per(clipped as f64, actor_evals);
    d.approx_kl = per(kl_sum, actor_evals);
    d.policy_loss = -per(obj_sum, actor_evals);
    d.entropy = per(ent_sum, actor_evals);
    d.value_loss = per(vloss_sum, critic_evals);
    d.actor_grad_norm = per(actor_norm_sum, steps);
    d.critic_grad_norm = per(critic_norm_sum, steps);
    d.actor_samples = actor_evals;
    d.critic_samples = critic_evals;
    d.minibatches = steps;
    Ok(d)
}

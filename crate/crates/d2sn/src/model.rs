//! The actor-critic: auto-regressive batch-action sampling, teacher-forced
//! log-probabilities and the state-value critic.

use std::collections::HashMap;

use micod_core::env::{apply_subaction, BatchDecision, InnerStep, OuterState, SubAction, SubState};
use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::net::{build, D2snConfig, Forward, Layout, ParamStore};
use crate::tape::{Tape, Var};

#[derive(Clone, Debug)]
pub struct D2sn {
    config: D2snConfig,
    params: ParamStore,
    layout: Layout,
}

/// A sampled batch action.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledAction {
    /// Sub-actions in order. Unless holding is disabled the list always ends
    /// with a hold, which is forced once the pool is exhausted.
    pub steps: Vec<SubAction>,
    pub step_log_probs: Vec<f64>,
    pub log_prob: f64,
    /// `log_prob` without the forced hold at an exhausted pool.
    pub free_log_prob: f64,
    pub decision: BatchDecision,
}

/// Tape handles of one action's evaluation.
#[derive(Clone, Debug)]
pub struct PolicyEval {
    pub steps: Vec<SubAction>,
    pub step_log_probs: Vec<Var>,
    pub log_prob: Var,
    /// `log_prob` without the forced hold at an exhausted pool.
    pub free_log_prob: Var,
    /// Sum of the entropies of every head distribution that made a free choice.
    pub entropy: Var,
    pub decision: BatchDecision,
}

enum Source<'a, 'r> {
    Sample { rng: &'r mut dyn RngCore, greedy: bool },
    Replay { steps: &'a [SubAction], at: usize },
}

impl Source<'_, '_> {
    fn draw(rng: &mut dyn RngCore, log_probs: &[f64]) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = 0;
        for (i, lp) in log_probs.iter().enumerate() {
            if lp.is_finite() {
                acc += lp.exp();
                last = i;
                if u < acc {
                    return i;
                }
            }
        }
        last
    }

    fn argmax(log_probs: &[f64]) -> usize {
        let mut best = 0;
        for (i, &lp) in log_probs.iter().enumerate() {
            if lp > log_probs[best] {
                best = i;
            }
        }
        best
    }

    /// True to hold.
    fn hold(&mut self, log_probs: &[f64]) -> Result<bool> {
        match self {
            Source::Sample { rng, greedy } => Ok(if *greedy {
                log_probs[1] > log_probs[0]
            } else {
                Self::draw(&mut **rng, log_probs) == 1
            }),
            Source::Replay { steps, at } => {
                let step = steps.get(*at).ok_or_else(|| Error::Replay("action ends before a hold".into()))?;
                if step.hold {
                    *at += 1;
                }
                Ok(step.hold)
            }
        }
    }

    /// Position in `remaining` of the chosen row.
    fn pick(&mut self, log_probs: &[f64], remaining: &[usize]) -> Result<usize> {
        match self {
            Source::Sample { rng, greedy } => {
                Ok(if *greedy { Self::argmax(log_probs) } else { Self::draw(&mut **rng, log_probs) })
            }
            Source::Replay { steps, at } => {
                let step = steps.get(*at).ok_or_else(|| Error::Replay("action ends before a selection".into()))?;
                let row = match (step.hold, step.choice) {
                    (false, Some(row)) => row,
                    _ => return Err(Error::Replay(format!("expected a selection at sub-step {at}, got {step:?}"))),
                };
                *at += 1;
                remaining
                    .iter()
                    .position(|&r| r == row)
                    .ok_or_else(|| Error::Replay(format!("row {row} is not available at sub-step {}", *at - 1)))
            }
        }
    }

    fn terminal_hold(&mut self) -> Result<()> {
        if let Source::Replay { steps, at } = self {
            match steps.get(*at) {
                Some(s) if s.hold => *at += 1,
                other => return Err(Error::Replay(format!("expected the closing hold, got {other:?}"))),
            }
        }
        Ok(())
    }
}

fn pool_features(s: &OuterState, d_feat: usize, rows: impl Iterator<Item = usize>) -> Result<Matrix> {
    let mut data = Vec::new();
    let mut n = 0;
    for i in rows {
        let f = &s.pairs[i].features;
        if f.len() != d_feat {
            return Err(Error::Config(format!("pair feature width {} != {d_feat}", f.len())));
        }
        data.extend_from_slice(f);
        n += 1;
    }
    let m = Matrix::from_vec(n, d_feat, data);
    if !m.is_finite() {
        return Err(Error::NonFinite("pool features"));
    }
    Ok(m)
}

impl D2sn {
    pub fn new(config: D2snConfig) -> Result<Self> {
        config.validate()?;
        let (params, layout) = build(&config);
        Ok(Self { config, params, layout })
    }

    /// Rebuilds a network around saved parameters; names and shapes must match the config.
    pub fn from_params(config: D2snConfig, params: ParamStore) -> Result<Self> {
        let mut net = Self::new(config)?;
        if net.params.len() != params.len() {
            return Err(Error::Checkpoint(format!("expected {} tensors, found {}", net.params.len(), params.len())));
        }
        for (i, ((name, m), (want, shape))) in params.iter().zip(net.params.iter()).enumerate() {
            if name != want || m.shape() != shape.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {i}: expected {want} {:?}, found {name} {:?}",
                    shape.shape(),
                    m.shape()
                )));
            }
        }
        if !params.is_finite() {
            return Err(Error::NonFinite("parameters"));
        }
        net.params = params;
        Ok(net)
    }

    pub fn config(&self) -> &D2snConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn n_scalars(&self) -> usize {
        self.params.n_scalars()
    }

    fn fwd(&self) -> Forward<'_> {
        Forward { cfg: &self.config, params: &self.params, layout: &self.layout }
    }

    /// Gradient map from [`Tape::backward`] as one dense tensor per parameter.
    pub fn dense_grads(&self, grads: &HashMap<usize, Matrix>) -> Vec<Matrix> {
        self.params
            .tensors()
            .iter()
            .enumerate()
            .map(|(i, p)| grads.get(&i).cloned().unwrap_or_else(|| Matrix::zeros(p.rows(), p.cols())))
            .collect()
    }

    /// Actor encoder on an `n × d_feat` pool, `n ≥ 1`.
    pub fn encode(&self, features: &Matrix) -> Result<Matrix> {
        if features.rows() == 0 || features.cols() != self.config.d_feat {
            return Err(Error::Config(format!("encode expects n×{} with n ≥ 1, got {:?}", self.config.d_feat, features.shape())));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("pool features"));
        }
        let mut tape = Tape::new();
        let x = tape.leaf(features.clone());
        let r = self.fwd().encode(&mut tape, x, self.layout.actor);
        Ok(tape.value(r).clone())
    }

    /// Actor decoder over sub-state rows (`m × d_model`, `m ≥ 1`).
    pub fn aggregate(&self, rows: &Matrix) -> Matrix {
        assert!(rows.rows() > 0 && rows.cols() == self.config.d_model);
        let mut tape = Tape::new();
        let u = tape.leaf(rows.clone());
        let g = self.fwd().aggregate(&mut tape, u, self.layout.actor);
        tape.value(g).clone()
    }

    /// `(p_continue, p_hold)`.
    pub fn hold_head(&self, g: &Matrix, global: &[f64]) -> (f64, f64) {
        let mut tape = Tape::new();
        let z = self.context(&mut tape, g, global);
        let lp = self.fwd().hold_log_probs(&mut tape, z);
        let v = tape.value(lp);
        (v.get(0, 0).exp(), v.get(0, 1).exp())
    }

    /// Probability per row of `r`; masked rows get exactly 0.
    pub fn decision_head(&self, r: &Matrix, g: &Matrix, global: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
        if r.rows() == 0 || mask.len() != r.rows() {
            return Err(Error::Config("decision head needs one mask flag per row and at least one row".into()));
        }
        let mut tape = Tape::new();
        let z = self.context(&mut tape, g, global);
        let rv = tape.leaf(r.clone());
        let lp = self.fwd().decision_log_probs(&mut tape, rv, z, mask)?;
        Ok(tape.value(lp).data().iter().map(|v| v.exp()).collect())
    }

    fn context(&self, tape: &mut Tape, g: &Matrix, global: &[f64]) -> Var {
        let g = tape.leaf(g.clone());
        let ig = tape.leaf(Matrix::row_vector(global.to_vec()));
        tape.concat_cols(&[g, ig])
    }

    fn check_state(&self, s: &OuterState) -> Result<()> {
        if s.global.len() != self.config.global_dim {
            return Err(Error::Config(format!("global vector width {} != {}", s.global.len(), self.config.global_dim)));
        }
        if !s.global.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("global information"));
        }
        Ok(())
    }

    fn unroll(&self, tape: &mut Tape, s: &OuterState, exhaustive: bool, mut src: Source<'_, '_>) -> Result<PolicyEval> {
        self.check_state(s)?;
        let fwd = self.fwd();
        let t = self.layout.actor;
        let n0 = s.pairs.len();
        let ig = tape.leaf(Matrix::row_vector(s.global.clone()));
        let r1 = if n0 > 0 {
            let x = tape.leaf(pool_features(s, self.config.d_feat, 0..n0)?);
            Some(fwd.encode(tape, x, t))
        } else {
            None
        };

        let mut sub: SubState<'_> = s.sub_state();
        let mut steps = Vec::new();
        let mut step_vars = Vec::new();
        let mut entropies = Vec::new();
        let mut forced = None;
        let decision = loop {
            let remaining: Vec<usize> = sub.remaining_rows().collect();
            if remaining.is_empty() && exhaustive {
                break BatchDecision { selected: sub.selected.clone(), held: Vec::new() };
            }
            let u = match r1 {
                None => fwd.null_row(tape, t),
                Some(r1) if sub.selected.is_empty() => r1,
                Some(r1) => {
                    let sel = tape.gather(r1, &sub.selected);
                    let mark = fwd.selected_embedding(tape);
                    let sel = tape.add_row(sel, mark);
                    tape.concat_rows(&[r1, sel])
                }
            };
            let g = fwd.aggregate(tape, u, t);
            let z = tape.concat_cols(&[g, ig]);

            let mut terms = Vec::with_capacity(2);
            if !exhaustive {
                let hold_lp = fwd.hold_log_probs(tape, z);
                if remaining.is_empty() {
                    src.terminal_hold()?;
                    steps.push(SubAction::HOLD);
                    step_vars.push(tape.pick(hold_lp, 0, 1));
                    forced = Some(step_vars.len() - 1);
                    break BatchDecision { selected: sub.selected.clone(), held: Vec::new() };
                }
                entropies.push(tape.entropy(hold_lp));
                if src.hold(tape.value(hold_lp).data())? {
                    steps.push(SubAction::HOLD);
                    step_vars.push(tape.pick(hold_lp, 0, 1));
                    break BatchDecision { selected: sub.selected.clone(), held: remaining };
                }
                terms.push(tape.pick(hold_lp, 0, 0));
            }

            let ri = match r1 {
                Some(r1) if remaining.len() == n0 => r1,
                _ => {
                    let x = tape.leaf(pool_features(s, self.config.d_feat, remaining.iter().copied())?);
                    fwd.encode(tape, x, t)
                }
            };
            let dec_lp = fwd.decision_log_probs(tape, ri, z, &vec![false; remaining.len()])?;
            let k = src.pick(tape.value(dec_lp).data(), &remaining)?;
            entropies.push(tape.entropy(dec_lp));
            terms.push(tape.pick(dec_lp, 0, k));
            step_vars.push(if terms.len() == 1 { terms[0] } else { tape.sum(&terms) });
            let action = SubAction::select(remaining[k]);
            steps.push(action);
            sub = match apply_subaction(sub.clone(), action)? {
                InnerStep::Continue(next) => next,
                InnerStep::BatchEnd(d) => SubState { base: s, selected: d.selected, remaining: vec![false; n0] },
            };
        };
        if let Source::Replay { steps: given, at } = &src {
            if *at != given.len() {
                return Err(Error::Replay(format!("{} sub-actions left over", given.len() - at)));
            }
        }
        let log_prob = tape.sum(&step_vars);
        let free_log_prob = match forced {
            Some(i) => tape.sum(&step_vars[..i]),
            None => log_prob,
        };
        let entropy = tape.sum(&entropies);
        Ok(PolicyEval { steps, step_log_probs: step_vars, log_prob, free_log_prob, entropy, decision })
    }

    /// Samples a complete batch action. `greedy` takes the most likely
    /// outcome at every head; `exhaustive` disables holding.
    pub fn sample_action(&self, s: &OuterState, rng: &mut dyn RngCore, greedy: bool, exhaustive: bool) -> Result<SampledAction> {
        let mut tape = Tape::new();
        let eval = self.unroll(&mut tape, s, exhaustive, Source::Sample { rng, greedy })?;
        Ok(SampledAction {
            step_log_probs: eval.step_log_probs.iter().map(|&v| tape.scalar(v)).collect(),
            log_prob: tape.scalar(eval.log_prob),
            free_log_prob: tape.scalar(eval.free_log_prob),
            steps: eval.steps,
            decision: eval.decision,
        })
    }

    /// Teacher-forced evaluation of `steps` on a caller-owned tape.
    pub fn evaluate(&self, tape: &mut Tape, s: &OuterState, steps: &[SubAction], exhaustive: bool) -> Result<PolicyEval> {
        self.unroll(tape, s, exhaustive, Source::Replay { steps, at: 0 })
    }

    /// `(total, per-sub-action)` log-probabilities of a recorded action.
    pub fn log_prob(&self, s: &OuterState, steps: &[SubAction], exhaustive: bool) -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let eval = self.evaluate(&mut tape, s, steps, exhaustive)?;
        Ok((tape.scalar(eval.log_prob), eval.step_log_probs.iter().map(|&v| tape.scalar(v)).collect()))
    }

    /// State value on a caller-owned tape. Sees only `(I_g, I_p)`.
    pub fn critic_on_tape(&self, tape: &mut Tape, s: &OuterState) -> Result<Var> {
        self.check_state(s)?;
        let fwd = self.fwd();
        let t = self.layout.critic;
        let u = if s.pairs.is_empty() {
            fwd.null_row(tape, t)
        } else {
            let x = tape.leaf(pool_features(s, self.config.d_feat, 0..s.pairs.len())?);
            fwd.encode(tape, x, t)
        };
        let g = fwd.aggregate(tape, u, t);
        let ig = tape.leaf(Matrix::row_vector(s.global.clone()));
        let z = tape.concat_cols(&[g, ig]);
        Ok(fwd.value(tape, z))
    }

    pub fn critic_value(&self, s: &OuterState) -> Result<f64> {
        let mut tape = Tape::new();
        let v = self.critic_on_tape(&mut tape, s)?;
        Ok(tape.scalar(v))
    }
}

//! Network configuration, parameters and the differentiable building blocks.
//!
//! Both the actor and the critic own a trunk: an encoder (input projection,
//! multi-head self-attention, position-wise feed-forward, residuals) and a
//! decoder (self-attention over the sub-state rows followed by a gated
//! recurrent scan whose final state is the context vector `G`).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::tape::{Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Fan-in uniform projections with zeroed head outputs: the initial
    /// policy is uniform and the initial value is 0.
    ZeroHeads,
    /// Every tensor random, biases included.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct D2snConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_feat: usize,
    pub ffn_hidden: usize,
    /// Width of the global information vector.
    pub global_dim: usize,
    pub init: InitScheme,
    pub seed: u64,
}

impl D2snConfig {
    pub fn new(d_feat: usize, global_dim: usize) -> Self {
        Self { d_model: 32, n_heads: 2, d_feat, ffn_hidden: 64, global_dim, init: InitScheme::ZeroHeads, seed: 0 }
    }

    pub fn with_width(mut self, d_model: usize, n_heads: usize) -> Self {
        self.d_model = d_model;
        self.n_heads = n_heads;
        self.ffn_hidden = 2 * d_model;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_feat == 0 || self.ffn_hidden == 0 {
            return Err(Error::Config("widths must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!("d_model {} not divisible by {} heads", self.d_model, self.n_heads)));
        }
        Ok(())
    }
}

/// Named tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Matrix>,
}

impl ParamStore {
    fn new() -> Self {
        Self { names: Vec::new(), tensors: Vec::new() }
    }

    fn push(&mut self, name: String, m: Matrix) -> usize {
        self.names.push(name);
        self.tensors.push(m);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalars.
    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(Matrix::len).sum()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn get(&self, i: usize) -> &Matrix {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Matrix {
        &mut self.tensors[i]
    }

    pub fn tensors(&self) -> &[Matrix] {
        &self.tensors
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::is_finite)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct AttnIdx {
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct TrunkIdx {
    w_in: usize,
    b_in: usize,
    enc: AttnIdx,
    ffn_w1: usize,
    ffn_b1: usize,
    ffn_w2: usize,
    ffn_b2: usize,
    dec: AttnIdx,
    gru_w: usize,
    gru_u: usize,
    gru_b: usize,
    /// Stand-in row for an empty pool.
    null: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Layout {
    pub actor: TrunkIdx,
    /// Marks selected pairs in the decoder input.
    pub selected: usize,
    pub hold_w1: usize,
    pub hold_b1: usize,
    pub hold_w2: usize,
    pub hold_b2: usize,
    pub dec_wq: usize,
    pub dec_wk: usize,
    pub critic: TrunkIdx,
    pub v_w1: usize,
    pub v_b1: usize,
    pub v_w2: usize,
    pub v_b2: usize,
}

struct Builder<'a> {
    store: ParamStore,
    rng: ChaCha8Rng,
    cfg: &'a D2snConfig,
}

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    Weight,
    Bias,
    Embedding,
    Output,
}

impl Builder<'_> {
    fn add(&mut self, name: &str, rows: usize, cols: usize, kind: Kind) -> usize {
        let random = self.cfg.init == InitScheme::Random;
        let bound = match kind {
            Kind::Weight => 1.0 / (rows as f64).sqrt(),
            Kind::Embedding => 1.0 / (cols as f64).sqrt(),
            Kind::Output if random => 1.0 / (rows as f64).sqrt(),
            Kind::Bias if random => 0.1,
            Kind::Output | Kind::Bias => 0.0,
        };
        let data = (0..rows * cols)
            .map(|_| if bound > 0.0 { self.rng.random_range(-bound..bound) } else { 0.0 })
            .collect();
        self.store.push(name.to_string(), Matrix::from_vec(rows, cols, data))
    }

    fn attn(&mut self, prefix: &str) -> AttnIdx {
        let d = self.cfg.d_model;
        AttnIdx {
            wq: self.add(&format!("{prefix}.wq"), d, d, Kind::Weight),
            wk: self.add(&format!("{prefix}.wk"), d, d, Kind::Weight),
            wv: self.add(&format!("{prefix}.wv"), d, d, Kind::Weight),
            wo: self.add(&format!("{prefix}.wo"), d, d, Kind::Weight),
        }
    }

    fn trunk(&mut self, prefix: &str) -> TrunkIdx {
        let (d, f, h) = (self.cfg.d_model, self.cfg.d_feat, self.cfg.ffn_hidden);
        TrunkIdx {
            w_in: self.add(&format!("{prefix}.enc.w_in"), f, d, Kind::Weight),
            b_in: self.add(&format!("{prefix}.enc.b_in"), 1, d, Kind::Bias),
            enc: self.attn(&format!("{prefix}.enc.attn")),
            ffn_w1: self.add(&format!("{prefix}.enc.ffn_w1"), d, h, Kind::Weight),
            ffn_b1: self.add(&format!("{prefix}.enc.ffn_b1"), 1, h, Kind::Bias),
            ffn_w2: self.add(&format!("{prefix}.enc.ffn_w2"), h, d, Kind::Weight),
            ffn_b2: self.add(&format!("{prefix}.enc.ffn_b2"), 1, d, Kind::Bias),
            dec: self.attn(&format!("{prefix}.dec.attn")),
            gru_w: self.add(&format!("{prefix}.dec.gru_w"), d, 3 * d, Kind::Weight),
            gru_u: self.add(&format!("{prefix}.dec.gru_u"), d, 3 * d, Kind::Weight),
            gru_b: self.add(&format!("{prefix}.dec.gru_b"), 1, 3 * d, Kind::Bias),
            null: self.add(&format!("{prefix}.dec.null"), 1, d, Kind::Embedding),
        }
    }
}

pub(crate) fn build(cfg: &D2snConfig) -> (ParamStore, Layout) {
    let mut b = Builder { store: ParamStore::new(), rng: ChaCha8Rng::seed_from_u64(cfg.seed), cfg };
    let (d, g) = (cfg.d_model, cfg.global_dim);
    let actor = b.trunk("actor");
    let selected = b.add("actor.dec.selected", 1, d, Kind::Embedding);
    let hold_w1 = b.add("actor.hold.w1", d + g, d, Kind::Weight);
    let hold_b1 = b.add("actor.hold.b1", 1, d, Kind::Bias);
    let hold_w2 = b.add("actor.hold.w2", d, 2, Kind::Output);
    let hold_b2 = b.add("actor.hold.b2", 1, 2, Kind::Bias);
    let dec_wq = b.add("actor.decision.wq", d + g, d, Kind::Output);
    let dec_wk = b.add("actor.decision.wk", d, d, Kind::Weight);
    let critic = b.trunk("critic");
    let v_w1 = b.add("critic.value.w1", d + g, d, Kind::Weight);
    let v_b1 = b.add("critic.value.b1", 1, d, Kind::Bias);
    let v_w2 = b.add("critic.value.w2", d, 1, Kind::Output);
    let v_b2 = b.add("critic.value.b2", 1, 1, Kind::Bias);
    let layout = Layout {
        actor,
        selected,
        hold_w1,
        hold_b1,
        hold_w2,
        hold_b2,
        dec_wq,
        dec_wk,
        critic,
        v_w1,
        v_b1,
        v_w2,
        v_b2,
    };
    (b.store, layout)
}

/// Differentiable forward pieces bound to one parameter set.
pub(crate) struct Forward<'a> {
    pub cfg: &'a D2snConfig,
    pub params: &'a ParamStore,
    pub layout: &'a Layout,
}

impl Forward<'_> {
    fn p(&self, tape: &mut Tape, i: usize) -> Var {
        tape.param(i, self.params.get(i))
    }

    fn linear(&self, tape: &mut Tape, x: Var, w: usize, b: usize) -> Var {
        let w = self.p(tape, w);
        let b = self.p(tape, b);
        let y = tape.matmul(x, w);
        tape.add_row(y, b)
    }

    fn mha(&self, tape: &mut Tape, x: Var, idx: AttnIdx) -> Var {
        let d = self.cfg.d_model;
        let dk = d / self.cfg.n_heads;
        let (wq, wk, wv, wo) = (self.p(tape, idx.wq), self.p(tape, idx.wk), self.p(tape, idx.wv), self.p(tape, idx.wo));
        let q = tape.matmul(x, wq);
        let k = tape.matmul(x, wk);
        let v = tape.matmul(x, wv);
        let mut heads = Vec::with_capacity(self.cfg.n_heads);
        for h in 0..self.cfg.n_heads {
            let qh = tape.col_slice(q, h * dk, dk);
            let kh = tape.col_slice(k, h * dk, dk);
            let vh = tape.col_slice(v, h * dk, dk);
            let s = tape.matmul_t(qh, kh);
            let s = tape.scale(s, 1.0 / (dk as f64).sqrt());
            let a = tape.softmax_rows(s);
            heads.push(tape.matmul(a, vh));
        }
        let o = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads) };
        tape.matmul(o, wo)
    }

    /// `n × d_feat` features to `n × d_model` embeddings.
    pub fn encode(&self, tape: &mut Tape, x: Var, t: TrunkIdx) -> Var {
        let h0 = self.linear(tape, x, t.w_in, t.b_in);
        let a = self.mha(tape, h0, t.enc);
        let h1 = tape.add(h0, a);
        let f = self.linear(tape, h1, t.ffn_w1, t.ffn_b1);
        let f = tape.tanh(f);
        let f = self.linear(tape, f, t.ffn_w2, t.ffn_b2);
        tape.add(h1, f)
    }

    /// Sub-state rows (`m × d_model`, `m ≥ 1`) to the context `G` (`1 × d_model`).
    pub fn aggregate(&self, tape: &mut Tape, u: Var, t: TrunkIdx) -> Var {
        let a = self.mha(tape, u, t.dec);
        let h = tape.add(u, a);
        let (w, uu, b) = (self.p(tape, t.gru_w), self.p(tape, t.gru_u), self.p(tape, t.gru_b));
        tape.gru(h, w, uu, b)
    }

    pub fn null_row(&self, tape: &mut Tape, t: TrunkIdx) -> Var {
        self.p(tape, t.null)
    }

    pub fn selected_embedding(&self, tape: &mut Tape) -> Var {
        self.p(tape, self.layout.selected)
    }

    /// `[log p_continue, log p_hold]` from `z = [G, I_g]`.
    pub fn hold_log_probs(&self, tape: &mut Tape, z: Var) -> Var {
        let l = self.layout;
        let h = self.linear(tape, z, l.hold_w1, l.hold_b1);
        let h = tape.tanh(h);
        let logits = self.linear(tape, h, l.hold_w2, l.hold_b2);
        tape.log_softmax(logits, &[false, false])
    }

    /// Log-probabilities over the rows of `r` from `z = [G, I_g]`.
    pub fn decision_log_probs(&self, tape: &mut Tape, r: Var, z: Var, mask: &[bool]) -> Result<Var> {
        if mask.iter().all(|&m| m) {
            return Err(Error::AllMasked);
        }
        let l = self.layout;
        let (wq, wk) = (self.p(tape, l.dec_wq), self.p(tape, l.dec_wk));
        let q = tape.matmul(z, wq);
        let k = tape.matmul(r, wk);
        let logits = tape.matmul_t(q, k);
        let logits = tape.scale(logits, 1.0 / (self.cfg.d_model as f64).sqrt());
        Ok(tape.log_softmax(logits, mask))
    }

    pub fn value(&self, tape: &mut Tape, z: Var) -> Var {
        let l = self.layout;
        let h = self.linear(tape, z, l.v_w1, l.v_b1);
        let h = tape.tanh(h);
        self.linear(tape, h, l.v_w2, l.v_b2)
    }
}

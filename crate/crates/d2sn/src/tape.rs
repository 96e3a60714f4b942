//! Reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records every operation in execution order. Calling
//! [`Tape::backward`] with seed gradients on any set of nodes walks the
//! record backwards and accumulates gradients into parameter leaves.

use std::collections::HashMap;

use crate::matrix::Matrix;

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    SoftmaxRows(Var),
    ColSlice(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Gather(Var, Vec<usize>),
    LogSoftmax(Var, Vec<bool>),
    Entropy(Var),
    Pick(Var, usize, usize),
    Sum(Vec<Var>),
    Gru(Box<GruCache>),
}

#[derive(Clone, Debug)]
struct GruCache {
    x: Var,
    w: Var,
    u: Var,
    b: Var,
    /// Per step: previous hidden state, update gate, reset gate, candidate.
    steps: Vec<[Vec<f64>; 4]>,
}

struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<usize, Var>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.get(0, 0)
    }

    /// Constant input; receives no gradient outside the tape.
    pub fn leaf(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf)
    }

    /// Trainable tensor `index`. Loaded once per tape; later calls return the same node.
    pub fn param(&mut self, index: usize, value: &Matrix) -> Var {
        if let Some(&v) = self.params.get(&index) {
            return v;
        }
        let v = self.push(value.clone(), Op::Param(index));
        self.params.insert(index, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(self.value(b));
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    /// Adds the `1 × cols` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let bias = self.value(b);
        assert_eq!(bias.rows(), 1);
        let mut v = self.value(a).clone();
        for r in 0..v.rows() {
            for (x, y) in v.row_mut(r).iter_mut().zip(bias.data()) {
                *x += y;
            }
        }
        self.push(v, Op::AddRow(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for r in 0..v.rows() {
            let row = v.row_mut(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                z += *x;
            }
            for x in row.iter_mut() {
                *x /= z;
            }
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn col_slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let src = self.value(a);
        let mut v = Matrix::zeros(src.rows(), len);
        for r in 0..src.rows() {
            v.row_mut(r).copy_from_slice(&src.row(r)[start..start + len]);
        }
        self.push(v, Op::ColSlice(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut v = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut at = 0;
            for &p in parts {
                let m = self.value(p);
                assert_eq!(m.rows(), rows, "concat_cols row mismatch");
                v.row_mut(r)[at..at + m.cols()].copy_from_slice(m.row(r));
                at += m.cols();
            }
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(m.data());
        }
        let rows = data.len() / cols.max(1);
        self.push(Matrix::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    /// Rows of `a` at `indices`, in that order (repeats allowed).
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Var {
        let src = self.value(a);
        let mut v = Matrix::zeros(indices.len(), src.cols());
        for (i, &r) in indices.iter().enumerate() {
            v.row_mut(i).copy_from_slice(src.row(r));
        }
        self.push(v, Op::Gather(a, indices.to_vec()))
    }

    /// Log-softmax of a `1 × n` row over the unmasked entries
    /// (`mask[j] == true` removes entry `j`, whose output is −∞).
    pub fn log_softmax(&mut self, a: Var, mask: &[bool]) -> Var {
        let src = self.value(a);
        assert_eq!(src.rows(), 1);
        assert_eq!(src.cols(), mask.len());
        let live = || src.data().iter().zip(mask).filter(|(_, m)| !**m).map(|(x, _)| *x);
        let max = live().fold(f64::NEG_INFINITY, f64::max);
        assert!(max.is_finite(), "log_softmax over no finite entries");
        let lse = max + live().map(|x| (x - max).exp()).sum::<f64>().ln();
        let data = src.data().iter().zip(mask).map(|(&x, &m)| if m { f64::NEG_INFINITY } else { x - lse }).collect();
        self.push(Matrix::row_vector(data), Op::LogSoftmax(a, mask.to_vec()))
    }

    /// Entropy `−Σ p log p` of a log-probability row (−∞ entries contribute 0).
    pub fn entropy(&mut self, logp: Var) -> Var {
        let h = -self.value(logp).data().iter().filter(|l| l.is_finite()).map(|&l| l.exp() * l).sum::<f64>();
        self.push(Matrix::from_vec(1, 1, vec![h]), Op::Entropy(logp))
    }

    pub fn pick(&mut self, a: Var, r: usize, c: usize) -> Var {
        let v = self.value(a).get(r, c);
        self.push(Matrix::from_vec(1, 1, vec![v]), Op::Pick(a, r, c))
    }

    /// Sum of same-shaped nodes; a zero `1×1` for an empty list.
    pub fn sum(&mut self, parts: &[Var]) -> Var {
        let v = match parts.first() {
            None => Matrix::zeros(1, 1),
            Some(&first) => {
                let mut acc = self.value(first).clone();
                for &p in &parts[1..] {
                    acc.add_assign(self.value(p));
                }
                acc
            }
        };
        self.push(v, Op::Sum(parts.to_vec()))
    }

    /// Gated recurrent scan over the rows of `x` from a zero hidden state,
    /// returning the final hidden state (`1 × h`).
    ///
    /// `w` is `d_in × 3h`, `u` is `h × 3h` and `b` is `1 × 3h`, with column
    /// blocks ordered update, reset, candidate:
    ///
    /// ```text
    /// z = σ(x W_z + h U_z + b_z)
    /// r = σ(x W_r + h U_r + b_r)
    /// n = tanh(x W_n + (r ⊙ h) U_n + b_n)
    /// h' = (1 − z) ⊙ n + z ⊙ h
    /// ```
    pub fn gru(&mut self, x: Var, w: Var, u: Var, b: Var) -> Var {
        let (xm, wm, um, bm) = (self.value(x), self.value(w), self.value(u), self.value(b));
        let h = um.rows();
        assert_eq!(wm.shape(), (xm.cols(), 3 * h));
        assert_eq!(um.shape(), (h, 3 * h));
        assert_eq!(bm.shape(), (1, 3 * h));
        let xw = xm.matmul(wm);
        let mut state = vec![0.0; h];
        let mut steps = Vec::with_capacity(xm.rows());
        for t in 0..xm.rows() {
            let pre = xw.row(t);
            let hu = Matrix::row_vector(state.clone()).matmul(um);
            let hu = hu.data();
            let mut z = vec![0.0; h];
            let mut r = vec![0.0; h];
            for j in 0..h {
                z[j] = sigmoid(pre[j] + hu[j] + bm.get(0, j));
                r[j] = sigmoid(pre[h + j] + hu[h + j] + bm.get(0, h + j));
            }
            let rh: Vec<f64> = r.iter().zip(&state).map(|(a, b)| a * b).collect();
            let rhu = Matrix::row_vector(rh).matmul(um);
            let mut n = vec![0.0; h];
            for j in 0..h {
                n[j] = (pre[2 * h + j] + rhu.get(0, 2 * h + j) + bm.get(0, 2 * h + j)).tanh();
            }
            let next: Vec<f64> = (0..h).map(|j| (1.0 - z[j]) * n[j] + z[j] * state[j]).collect();
            steps.push([std::mem::replace(&mut state, next), z, r, n]);
        }
        self.push(Matrix::row_vector(state), Op::Gru(Box::new(GruCache { x, w, u, b, steps })))
    }

    /// Gradients of `Σ seedᵢ · nodeᵢ` with respect to every parameter leaf,
    /// keyed by parameter index.
    pub fn backward(&self, seeds: &[(Var, Matrix)]) -> HashMap<usize, Matrix> {
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        let accumulate = |grads: &mut Vec<Option<Matrix>>, v: Var, g: Matrix| match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        };
        for (v, g) in seeds {
            assert_eq!(self.value(*v).shape(), g.shape(), "seed shape mismatch");
            accumulate(&mut grads, *v, g.clone());
        }
        let mut out = HashMap::new();
        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(idx) => {
                    out.insert(*idx, g);
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b));
                    let gb = self.value(*a).t_matmul(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.matmul(self.value(*b));
                    let gb = g.t_matmul(self.value(*a));
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::AddRow(a, b) => {
                    accumulate(&mut grads, *b, g.col_sums());
                    accumulate(&mut grads, *a, g);
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.map(|x| x * s)),
                Op::Tanh(a) => {
                    let mut ga = g;
                    for (x, y) in ga.data_mut().iter_mut().zip(node.value.data()) {
                        *x *= 1.0 - y * y;
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(p, q)| p * q).sum();
                        for ((o, gy), yv) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                            *o = yv * (gy - dot);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::ColSlice(a, start) => {
                    let src = self.value(*a);
                    let mut ga = Matrix::zeros(src.rows(), src.cols());
                    for r in 0..g.rows() {
                        ga.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let mut gp = Matrix::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[at..at + w]);
                        }
                        at += w;
                        accumulate(&mut grads, p, gp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let (rows, cols) = self.value(p).shape();
                        let gp = Matrix::from_vec(rows, cols, g.data()[at * cols..(at + rows) * cols].to_vec());
                        at += rows;
                        accumulate(&mut grads, p, gp);
                    }
                }
                Op::Gather(a, indices) => {
                    let src = self.value(*a);
                    let mut ga = Matrix::zeros(src.rows(), src.cols());
                    for (i, &r) in indices.iter().enumerate() {
                        for (o, v) in ga.row_mut(r).iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::LogSoftmax(a, mask) => {
                    let y = node.value.data();
                    let total: f64 = g.data().iter().zip(mask).filter(|(_, m)| !**m).map(|(v, _)| v).sum();
                    let data = (0..y.len())
                        .map(|j| if mask[j] { 0.0 } else { g.data()[j] - y[j].exp() * total })
                        .collect();
                    accumulate(&mut grads, *a, Matrix::row_vector(data));
                }
                Op::Entropy(logp) => {
                    let s = g.get(0, 0);
                    let data = self
                        .value(*logp)
                        .data()
                        .iter()
                        .map(|&l| if l.is_finite() { -s * l.exp() * (l + 1.0) } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *logp, Matrix::row_vector(data));
                }
                Op::Pick(a, r, c) => {
                    let src = self.value(*a);
                    let mut ga = Matrix::zeros(src.rows(), src.cols());
                    ga.set(*r, *c, g.get(0, 0));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(parts) => {
                    for &p in parts {
                        accumulate(&mut grads, p, g.clone());
                    }
                }
                Op::Gru(cache) => {
                    for (v, gv) in self.gru_backward(cache, &g) {
                        accumulate(&mut grads, v, gv);
                    }
                }
            }
        }
        out
    }

    fn gru_backward(&self, c: &GruCache, g: &Matrix) -> [(Var, Matrix); 4] {
        let (xm, wm, um) = (self.value(c.x), self.value(c.w), self.value(c.u));
        let h = um.rows();
        // Gradients with respect to the three pre-activations of each step.
        let mut d_pre = Matrix::zeros(xm.rows(), 3 * h);
        let mut gu = Matrix::zeros(h, 3 * h);
        let mut dh: Vec<f64> = g.data().to_vec();
        for t in (0..c.steps.len()).rev() {
            let [prev, z, r, n] = &c.steps[t];
            let mut da = vec![0.0; 3 * h];
            for j in 0..h {
                let dn = dh[j] * (1.0 - z[j]);
                let dz = dh[j] * (prev[j] - n[j]);
                da[2 * h + j] = dn * (1.0 - n[j] * n[j]);
                da[j] = dz * z[j] * (1.0 - z[j]);
            }
            // Candidate path: (r ⊙ h) U_n.
            let mut d_rh = vec![0.0; h];
            for (i, d) in d_rh.iter_mut().enumerate() {
                *d = (0..h).map(|j| da[2 * h + j] * um.get(i, 2 * h + j)).sum();
            }
            for j in 0..h {
                let dr = d_rh[j] * prev[j];
                da[h + j] = dr * r[j] * (1.0 - r[j]);
            }
            for i in 0..h {
                let rh = r[i] * prev[i];
                for j in 0..h {
                    gu.data_mut()[i * 3 * h + j] += prev[i] * da[j];
                    gu.data_mut()[i * 3 * h + h + j] += prev[i] * da[h + j];
                    gu.data_mut()[i * 3 * h + 2 * h + j] += rh * da[2 * h + j];
                }
            }
            let mut next = vec![0.0; h];
            for (i, dp) in next.iter_mut().enumerate() {
                let mut s = dh[i] * z[i] + d_rh[i] * r[i];
                for j in 0..h {
                    s += da[j] * um.get(i, j) + da[h + j] * um.get(i, h + j);
                }
                *dp = s;
            }
            d_pre.row_mut(t).copy_from_slice(&da);
            dh = next;
        }
        let gx = d_pre.matmul_t(wm);
        let gw = xm.t_matmul(&d_pre);
        let gb = d_pre.col_sums();
        [(c.x, gx), (c.w, gw), (c.u, gu), (c.b, gb)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Central-difference check of `f` (which builds a scalar from params 0..n).
    fn check(params: &[Matrix], f: impl Fn(&mut Tape, &[Var]) -> Var) {
        let build = |ps: &[Matrix]| {
            let mut t = Tape::new();
            let vars: Vec<Var> = ps.iter().enumerate().map(|(i, m)| t.param(i, m)).collect();
            let out = f(&mut t, &vars);
            (t, out)
        };
        let (tape, out) = build(params);
        let grads = tape.backward(&[(out, Matrix::from_vec(1, 1, vec![1.0]))]);
        let eps = 1e-6;
        for (i, p) in params.iter().enumerate() {
            for k in 0..p.len() {
                let mut plus = params.to_vec();
                plus[i].data_mut()[k] += eps;
                let mut minus = params.to_vec();
                minus[i].data_mut()[k] -= eps;
                let (tp, op) = build(&plus);
                let (tm, om) = build(&minus);
                let numeric = (tp.scalar(op) - tm.scalar(om)) / (2.0 * eps);
                let analytic = grads.get(&i).map_or(0.0, |g| g.data()[k]);
                assert!(
                    (numeric - analytic).abs() <= 1e-6 * (1.0 + numeric.abs()),
                    "param {i}[{k}]: numeric {numeric} analytic {analytic}"
                );
            }
        }
    }

    #[test]
    fn attention_chain_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = vec![random(&mut rng, 3, 4), random(&mut rng, 4, 4), random(&mut rng, 1, 4), random(&mut rng, 1, 3)];
        check(&params, |t, v| {
            let q = t.matmul(v[0], v[1]);
            let q = t.add_row(q, v[2]);
            let s = t.matmul_t(q, v[0]);
            let s = t.scale(s, 0.5);
            let a = t.softmax_rows(s);
            let o = t.matmul(a, v[0]);
            let o = t.tanh(o);
            let left = t.col_slice(o, 1, 2);
            let right = t.col_slice(o, 0, 2);
            let both = t.concat_cols(&[left, right]);
            let both = t.add_row(both, v[2]);
            let rows = t.concat_rows(&[both, both]);
            let g = t.gather(rows, &[0, 5, 5, 2]);
            let head = t.gather(g, &[1]);
            let head = t.col_slice(head, 0, 3);
            let head = t.add(head, v[3]);
            let lp = t.log_softmax(head, &[false, true, false]);
            let h = t.entropy(lp);
            let p = t.pick(lp, 0, 2);
            t.sum(&[h, p])
        });
    }

    #[test]
    fn gru_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = vec![random(&mut rng, 4, 3), random(&mut rng, 3, 9), random(&mut rng, 3, 9), random(&mut rng, 1, 9), random(&mut rng, 3, 1)];
        check(&params, |t, v| {
            let hfin = t.gru(v[0], v[1], v[2], v[3]);
            t.matmul(hfin, v[4])
        });
    }

    #[test]
    fn gru_single_step_matches_formula() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::row_vector(vec![0.3]));
        let w = t.leaf(Matrix::row_vector(vec![1.0, 2.0, 3.0]));
        let u = t.leaf(Matrix::row_vector(vec![5.0, 5.0, 5.0]));
        let b = t.leaf(Matrix::row_vector(vec![0.1, 0.0, -0.2]));
        let h = t.gru(x, w, u, b);
        let z = sigmoid(0.3 + 0.1);
        let n = (0.9f64 - 0.2).tanh();
        assert!((t.scalar(h) - (1.0 - z) * n).abs() < 1e-15);
    }

    #[test]
    fn masked_entries_get_zero_probability() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::row_vector(vec![1.0, 50.0, 2.0]));
        let lp = t.log_softmax(a, &[false, true, false]);
        let v = t.value(lp).data().to_vec();
        assert_eq!(v[1].exp(), 0.0);
        assert!((v[0].exp() + v[2].exp() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn shared_param_loaded_once() {
        let mut t = Tape::new();
        let m = Matrix::row_vector(vec![2.0]);
        let a = t.param(0, &m);
        let b = t.param(0, &m);
        assert_eq!(a, b);
        let s = t.matmul(a, b);
        let g = t.backward(&[(s, Matrix::row_vector(vec![1.0]))]);
        assert_eq!(g[&0].data(), &[4.0]);
    }
}

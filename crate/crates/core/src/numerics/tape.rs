//! Reverse-mode differentiation over whole-matrix operations.
//!
//! A [`Tape`] records one forward pass. Nodes are appended in evaluation
//! order, so the reverse of insertion order is a reverse topological order and
//! [`Tape::backward`] visits each node exactly once.

use super::matrix::{gemm, Matrix};
use super::ops;
use crate::error::{Error, Result};
use std::sync::atomic::{AtomicU64, Ordering};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a node of a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: usize,
}

/// A contiguous run of columns forming one sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Block {
    pub start: usize,
    pub len: usize,
}

enum Op {
    Leaf { slot: Option<usize> },
    MatMul(usize, usize),
    Affine { w: usize, x: usize, b: Option<usize> },
    Add(usize, usize),
    Sub(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    LayerNorm { x: usize, c: f64 },
    Gather { table: usize, ids: Vec<usize> },
    Attention { k: usize, q: usize, v: usize, blocks: Vec<Block>, probs: Vec<Matrix> },
    CausalSoftmax(usize),
    SelectCols { x: usize, cols: Vec<usize> },
    SumSq(usize),
    CrossEntropy { logits: usize, targets: Vec<Option<usize>>, count: usize },
    Squared { logits: usize, targets: Vec<Option<usize>>, count: usize },
}

struct Node {
    value: Matrix,
    op: Op,
}

pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    slots: usize,
}

/// Adjoints of the parameter slots registered with [`Tape::param`].
#[derive(Debug)]
pub struct Gradients {
    pub slots: Vec<Option<Matrix>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed), nodes: Vec::new(), slots: 0 }
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        debug_assert!(value.is_finite() || matches!(op, Op::Leaf { .. }), "non-finite value");
        self.nodes.push(Node { value, op });
        Var { tape: self.id, idx: self.nodes.len() - 1 }
    }

    fn idx(&self, v: Var) -> usize {
        assert_eq!(v.tape, self.id, "variable belongs to another tape");
        v.idx
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[self.idx(v)].value
    }

    /// A differentiable leaf whose adjoint is reported under `slot`.
    pub fn param(&mut self, slot: usize, value: Matrix) -> Var {
        self.slots = self.slots.max(slot + 1);
        self.push(value, Op::Leaf { slot: Some(slot) })
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf { slot: None })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let v = self.nodes[ia].value.matmul(&self.nodes[ib].value);
        self.push(v, Op::MatMul(ia, ib))
    }

    /// `W X + b·1ᵀ`.
    pub fn affine(&mut self, w: Var, x: Var, b: Option<Var>) -> Var {
        let (iw, ix) = (self.idx(w), self.idx(x));
        let ibias = b.map(|b| self.idx(b));
        let mut y = self.nodes[iw].value.matmul(&self.nodes[ix].value);
        if let Some(ib) = ibias {
            let bias = &self.nodes[ib].value;
            assert_eq!((bias.rows(), bias.cols()), (y.rows(), 1), "bias shape");
            for i in 0..y.rows() {
                let bi = bias[(i, 0)];
                y.row_mut(i).iter_mut().for_each(|v| *v += bi);
            }
        }
        self.push(y, Op::Affine { w: iw, x: ix, b: ibias })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let v = self.nodes[ia].value.add(&self.nodes[ib].value);
        self.push(v, Op::Add(ia, ib))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let v = self.nodes[ia].value.sub(&self.nodes[ib].value);
        self.push(v, Op::Sub(ia, ib))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let ia = self.idx(a);
        let v = self.nodes[ia].value.scale(s);
        self.push(v, Op::Scale(ia, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let v = self.nodes[ia].value.map(ops::relu);
        self.push(v, Op::Relu(ia))
    }

    pub fn layernorm(&mut self, x: Var, c: f64) -> Var {
        let ix = self.idx(x);
        let v = ops::layernorm_columns(&self.nodes[ix].value, c);
        self.push(v, Op::LayerNorm { x: ix, c })
    }

    /// Columns `ids` of `table`.
    pub fn gather(&mut self, table: Var, ids: Vec<usize>) -> Var {
        let it = self.idx(table);
        let v = self.nodes[it].value.select_columns(&ids);
        self.push(v, Op::Gather { table: it, ids })
    }

    /// Per block `b`: `V_b · softmax_causal(K_bᵀ Q_b)`.
    pub fn attention(&mut self, k: Var, q: Var, v: Var, blocks: Vec<Block>) -> Var {
        let (ik, iq, iv) = (self.idx(k), self.idx(q), self.idx(v));
        let (out, probs) = attention_forward(&self.nodes[ik].value, &self.nodes[iq].value, &self.nodes[iv].value, &blocks);
        self.push(out, Op::Attention { k: ik, q: iq, v: iv, blocks, probs })
    }

    /// Attention probabilities of an [`Tape::attention`] node, one per block.
    pub fn attention_probs(&self, node: Var) -> Option<&[Matrix]> {
        match &self.nodes[self.idx(node)].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    pub fn causal_softmax(&mut self, s: Var) -> Var {
        let is = self.idx(s);
        let v = ops::softmax_columns_causal(&self.nodes[is].value);
        self.push(v, Op::CausalSoftmax(is))
    }

    pub fn select_cols(&mut self, x: Var, cols: Vec<usize>) -> Var {
        let ix = self.idx(x);
        let v = self.nodes[ix].value.select_columns(&cols);
        self.push(v, Op::SelectCols { x: ix, cols })
    }

    /// Squared Frobenius norm, as a 1×1 node.
    pub fn sum_sq(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let v = Matrix::filled(1, 1, self.nodes[ia].value.frobenius_sq());
        self.push(v, Op::SumSq(ia))
    }

    /// Mean cross-entropy over the columns that carry a target class.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<Option<usize>>) -> Var {
        let il = self.idx(logits);
        let l = &self.nodes[il].value;
        assert_eq!(targets.len(), l.cols(), "one target slot per column");
        let mut total = 0.0;
        let mut count = 0;
        for (j, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                let ls = ops::log_softmax(&l.column(j));
                total -= ls[t];
                count += 1;
            }
        }
        let v = Matrix::filled(1, 1, if count > 0 { total / count as f64 } else { 0.0 });
        self.push(v, Op::CrossEntropy { logits: il, targets, count })
    }

    /// `(1/count) Σ ‖f_j − onehot(t_j)‖²` over targeted columns.
    pub fn squared_loss(&mut self, logits: Var, targets: Vec<Option<usize>>) -> Var {
        let il = self.idx(logits);
        let l = &self.nodes[il].value;
        assert_eq!(targets.len(), l.cols(), "one target slot per column");
        let mut total = 0.0;
        let mut count = 0;
        for (j, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                for i in 0..l.rows() {
                    let z = if i == t { 1.0 } else { 0.0 };
                    total += (l[(i, j)] - z).powi(2);
                }
                count += 1;
            }
        }
        let v = Matrix::filled(1, 1, if count > 0 { total / count as f64 } else { 0.0 });
        self.push(v, Op::Squared { logits: il, targets, count })
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[(0, 0)]
    }

    /// Adjoints of every parameter slot with respect to the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.tape != self.id || loss.idx >= self.nodes.len() {
            return Err(Error::Usage("loss node is detached from this tape".into()));
        }
        if self.nodes[loss.idx].value.shape() != (1, 1) {
            return Err(Error::Usage("backward needs a scalar loss node".into()));
        }
        let mut adj: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.idx] = Some(Matrix::filled(1, 1, 1.0));
        let mut slots: Vec<Option<Matrix>> = vec![None; self.slots];
        for i in (0..=loss.idx).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf { slot } => {
                    if let Some(s) = slot {
                        accumulate(&mut slots[*s], g);
                    }
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let ga = g.matmul_t(vb);
                    let gb = va.t_matmul(&g);
                    accumulate(&mut adj[*a], ga);
                    accumulate(&mut adj[*b], gb);
                }
                Op::Affine { w, x, b } => {
                    let (vw, vx) = (&self.nodes[*w].value, &self.nodes[*x].value);
                    accumulate(&mut adj[*w], g.matmul_t(vx));
                    accumulate(&mut adj[*x], vw.t_matmul(&g));
                    if let Some(b) = b {
                        let sums: Vec<f64> = (0..g.rows()).map(|r| g.row(r).iter().sum()).collect();
                        accumulate(&mut adj[*b], Matrix::col_vector(&sums));
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj[*b], g.clone());
                    accumulate(&mut adj[*a], g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj[*b], g.scale(-1.0));
                    accumulate(&mut adj[*a], g);
                }
                Op::Scale(a, s) => accumulate(&mut adj[*a], g.scale(*s)),
                Op::Relu(a) => {
                    let ga = g.zip_map(&node.value, |d, y| if y > 0.0 { d } else { 0.0 });
                    accumulate(&mut adj[*a], ga);
                }
                Op::LayerNorm { x, c } => {
                    let gx = ops::layernorm_columns_backward(&self.nodes[*x].value, *c, &g);
                    accumulate(&mut adj[*x], gx);
                }
                Op::Gather { table, ids } => {
                    let t = &self.nodes[*table].value;
                    let mut gt = Matrix::zeros(t.rows(), t.cols());
                    for (j, &id) in ids.iter().enumerate() {
                        for r in 0..t.rows() {
                            gt[(r, id)] += g[(r, j)];
                        }
                    }
                    accumulate(&mut adj[*table], gt);
                }
                Op::Attention { k, q, v, blocks, probs } => {
                    let (gk, gq, gv) = attention_backward(
                        &self.nodes[*k].value,
                        &self.nodes[*q].value,
                        &self.nodes[*v].value,
                        blocks,
                        probs,
                        &g,
                    );
                    accumulate(&mut adj[*k], gk);
                    accumulate(&mut adj[*q], gq);
                    accumulate(&mut adj[*v], gv);
                }
                Op::CausalSoftmax(s) => {
                    accumulate(&mut adj[*s], ops::softmax_columns_causal_backward(&node.value, &g));
                }
                Op::SelectCols { x, cols } => {
                    let vx = &self.nodes[*x].value;
                    let mut gx = Matrix::zeros(vx.rows(), vx.cols());
                    for (j, &c) in cols.iter().enumerate() {
                        for r in 0..vx.rows() {
                            gx[(r, c)] += g[(r, j)];
                        }
                    }
                    accumulate(&mut adj[*x], gx);
                }
                Op::SumSq(a) => {
                    let s = g[(0, 0)];
                    accumulate(&mut adj[*a], self.nodes[*a].value.scale(2.0 * s));
                }
                Op::CrossEntropy { logits, targets, count } => {
                    let l = &self.nodes[*logits].value;
                    let s = g[(0, 0)] / (*count).max(1) as f64;
                    let mut gl = Matrix::zeros(l.rows(), l.cols());
                    for (j, t) in targets.iter().enumerate() {
                        if let Some(t) = *t {
                            let p = ops::softmax(&l.column(j));
                            for r in 0..l.rows() {
                                gl[(r, j)] = s * (p[r] - if r == t { 1.0 } else { 0.0 });
                            }
                        }
                    }
                    accumulate(&mut adj[*logits], gl);
                }
                Op::Squared { logits, targets, count } => {
                    let l = &self.nodes[*logits].value;
                    let s = 2.0 * g[(0, 0)] / (*count).max(1) as f64;
                    let mut gl = Matrix::zeros(l.rows(), l.cols());
                    for (j, t) in targets.iter().enumerate() {
                        if let Some(t) = *t {
                            for r in 0..l.rows() {
                                gl[(r, j)] = s * (l[(r, j)] - if r == t { 1.0 } else { 0.0 });
                            }
                        }
                    }
                    accumulate(&mut adj[*logits], gl);
                }
            }
        }
        Ok(Gradients { slots })
    }
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(acc) => acc.axpy(1.0, &g),
        None => *slot = Some(g),
    }
}

/// Forward pass of blockwise causal attention; returns the output and the
/// probability matrix of every block.
pub fn attention_forward(k: &Matrix, q: &Matrix, v: &Matrix, blocks: &[Block]) -> (Matrix, Vec<Matrix>) {
    let mut out = Matrix::zeros(v.rows(), v.cols());
    let mut probs = Vec::with_capacity(blocks.len());
    for b in blocks {
        let kb = k.slice_columns(b.start, b.start + b.len);
        let qb = q.slice_columns(b.start, b.start + b.len);
        let vb = v.slice_columns(b.start, b.start + b.len);
        let s = kb.t_matmul(&qb);
        let p = ops::softmax_columns_causal(&s);
        let mut ob = Matrix::zeros(v.rows(), b.len);
        gemm(1.0, &vb, false, &p, false, 0.0, &mut ob);
        out.write_columns(b.start, &ob);
        probs.push(p);
    }
    (out, probs)
}

fn attention_backward(
    k: &Matrix,
    q: &Matrix,
    v: &Matrix,
    blocks: &[Block],
    probs: &[Matrix],
    g: &Matrix,
) -> (Matrix, Matrix, Matrix) {
    let mut gk = Matrix::zeros(k.rows(), k.cols());
    let mut gq = Matrix::zeros(q.rows(), q.cols());
    let mut gv = Matrix::zeros(v.rows(), v.cols());
    for (b, p) in blocks.iter().zip(probs) {
        let r = b.start..b.start + b.len;
        let kb = k.slice_columns(r.start, r.end);
        let qb = q.slice_columns(r.start, r.end);
        let vb = v.slice_columns(r.start, r.end);
        let gb = g.slice_columns(r.start, r.end);
        gv.write_columns(b.start, &gb.matmul_t(p));
        let gp = vb.t_matmul(&gb);
        let gs = ops::softmax_columns_causal_backward(p, &gp);
        gk.write_columns(b.start, &qb.matmul_t(&gs));
        gq.write_columns(b.start, &kb.matmul(&gs));
    }
    (gk, gq, gv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::Rng;

    fn rand_matrix(r: usize, c: usize, rng: &mut Rng) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.normal())
    }

    /// Central-difference check of `f` at `x` against the tape gradient in slot 0.
    fn check(x: &Matrix, f: impl Fn(&mut Tape, Var) -> Var) {
        let mut t = Tape::new();
        let v = t.param(0, x.clone());
        let l = f(&mut t, v);
        let g = t.backward(l).unwrap().slots[0].clone().unwrap_or(Matrix::zeros(x.rows(), x.cols()));
        let h = 1e-5;
        for idx in 0..x.data().len() {
            let eval = |d: f64| {
                let mut xp = x.clone();
                xp.data_mut()[idx] += d;
                let mut t = Tape::new();
                let v = t.param(0, xp);
                let l = f(&mut t, v);
                t.scalar(l)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let an = g.data()[idx];
            let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            assert!(err <= 1e-4, "entry {idx}: analytic {an} vs numeric {fd}");
        }
    }

    #[test]
    fn half_squared_norm_gradient_is_identity() {
        let x = Matrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap();
        let mut t = Tape::new();
        let v = t.param(0, x.clone());
        let s = t.sum_sq(v);
        let l = t.scale(s, 0.5);
        assert_eq!(t.backward(l).unwrap().slots[0].as_ref().unwrap(), &x);
    }

    #[test]
    fn causal_softmax_dot_gradient() {
        let mut r = Rng::seed(1);
        let s = rand_matrix(4, 4, &mut r);
        let w = rand_matrix(4, 4, &mut r);
        check(&s, |t, v| {
            let p = t.causal_softmax(v);
            let c = t.constant(w.clone());
            let d = t.matmul(c, p);
            let e = t.select_cols(d, vec![0, 1, 2, 3]);
            let f = t.affine(c, e, None);
            t.sum_sq(f)
        });
    }

    #[test]
    fn layernorm_gradient_above_threshold() {
        let mut r = Rng::seed(2);
        let x = rand_matrix(5, 3, &mut r);
        let w = rand_matrix(5, 5, &mut r);
        check(&x, |t, v| {
            let y = t.layernorm(v, 0.1);
            let c = t.constant(w.clone());
            let z = t.matmul(c, y);
            t.sum_sq(z)
        });
        // Below-threshold branch: ‖P⊥x‖ < C.
        let small = x.scale(0.01);
        check(&small, |t, v| {
            let y = t.layernorm(v, 10.0);
            let c = t.constant(w.clone());
            let z = t.matmul(c, y);
            t.sum_sq(z)
        });
    }

    #[test]
    fn attention_gradients() {
        let mut r = Rng::seed(3);
        let blocks = vec![Block { start: 0, len: 3 }, Block { start: 3, len: 4 }];
        let k = rand_matrix(2, 7, &mut r);
        let q = rand_matrix(2, 7, &mut r);
        let v = rand_matrix(3, 7, &mut r);
        let w = rand_matrix(3, 3, &mut r);
        let run = |t: &mut Tape, kv: Var, qv: Var, vv: Var| {
            let a = t.attention(kv, qv, vv, blocks.clone());
            let c = t.constant(w.clone());
            let z = t.matmul(c, a);
            t.sum_sq(z)
        };
        check(&k, |t, x| {
            let (qv, vv) = (t.constant(q.clone()), t.constant(v.clone()));
            run(t, x, qv, vv)
        });
        check(&q, |t, x| {
            let (kv, vv) = (t.constant(k.clone()), t.constant(v.clone()));
            run(t, kv, x, vv)
        });
        check(&v, |t, x| {
            let (kv, qv) = (t.constant(k.clone()), t.constant(q.clone()));
            run(t, kv, qv, x)
        });
    }

    #[test]
    fn affine_relu_gather_and_losses() {
        let mut r = Rng::seed(4);
        let w = rand_matrix(4, 3, &mut r);
        let table = rand_matrix(3, 5, &mut r);
        let b = rand_matrix(4, 1, &mut r);
        let targets = vec![Some(1), None, Some(3), Some(0)];
        for squared in [false, true] {
            check(&table, |t, x| {
                let e = t.gather(x, vec![4, 0, 2, 2]);
                let (wv, bv) = (t.constant(w.clone()), t.constant(b.clone()));
                let h = t.affine(wv, e, Some(bv));
                let h = t.relu(h);
                if squared {
                    t.squared_loss(h, targets.clone())
                } else {
                    t.cross_entropy(h, targets.clone())
                }
            });
            check(&b, |t, x| {
                let tv = t.constant(table.clone());
                let e = t.gather(tv, vec![4, 0, 2, 2]);
                let wv = t.constant(w.clone());
                let h = t.affine(wv, e, Some(x));
                let half = t.scale(h, 0.5);
                let h2 = t.sub(h, half);
                let h3 = t.add(h2, h);
                t.cross_entropy(h3, targets.clone())
            });
        }
    }

    #[test]
    fn detached_and_non_scalar_nodes_are_rejected() {
        let mut t1 = Tape::new();
        let mut t2 = Tape::new();
        let a = t1.param(0, Matrix::filled(1, 1, 1.0));
        let _ = t2.param(0, Matrix::filled(1, 1, 1.0));
        assert!(matches!(t2.backward(a), Err(Error::Usage(_))));
        let m = t1.param(1, Matrix::zeros(2, 2));
        assert!(matches!(t1.backward(m), Err(Error::Usage(_))));
    }

    #[test]
    fn loss_examples() {
        let mut t = Tape::new();
        let l = t.constant(Matrix::col_vector(&[1.0, 0.0, 0.0, 0.0]));
        let sq = t.squared_loss(l, vec![Some(1)]);
        assert_eq!(t.scalar(sq), 2.0);
        let one_hot = t.constant(Matrix::col_vector(&[0.0, 1.0, 0.0, 0.0]));
        let zero = t.squared_loss(one_hot, vec![Some(1)]);
        assert_eq!(t.scalar(zero), 0.0);
        let u = t.constant(Matrix::zeros(4, 3));
        let ce = t.cross_entropy(u, vec![Some(0), Some(2), Some(3)]);
        assert!((t.scalar(ce) - 4f64.ln()).abs() < 1e-15);
    }
}

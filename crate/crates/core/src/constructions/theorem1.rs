//! Exact second layer over a fixed (type, depth) embedding table.
//!
//! Every open of type `t` at depth `d` writes `exp(score)·b_{t,d}` into the
//! attention output and its matching close writes the exact negative, so only
//! unmatched opens survive. The feed-forward block reads `(token, depth)` from
//! `vᵀh`, the top-of-stack type from the `b` coordinates, and emits the next
//! token distribution directly.
//!
//! Channel layout of `g` (six dense layers, ReLU between):
//! - layers 1–2: `h ↦ (t, d, x_1..x_D)`, `x_s` the type read from depth block `s`;
//! - layers 3–4: `↦ (t, d, y)` with `y = x_d`, or `M_idx` at depth 0;
//! - layers 5–6: `↦ p(· | t, d, y)` in the first `2k` coordinates.

use super::gadgets::{argmax_mlp, choose_function_mlp, exact_linear_mlp, indexing_mlp, interpolating_mlp_along, GadgetMlp};
use super::basis::readout_direction;
use crate::balance::{balance_residual, BalanceModel};
use crate::dyck::{close_token, open_token, BracketStack, GrammarParams};
use crate::error::{capacity, input, Result};
use crate::numerics::linalg::{orthonormalize, random_orthonormal_complement, rank, solve_right};
use crate::numerics::{dot, Matrix, Rng};
use crate::transformer::params::{embedding_slot, embedding_table, slot_inputs, Dense, LayerParams, ModelParams};
use crate::transformer::{EmbeddingKind, ModelConfig};
use serde_json::{json, Value};

/// Balance residual accepted on input.
pub const BALANCE_TOLERANCE: f64 = 1e-10;
/// Largest accepted `max |W_V E − O|`.
pub const SOLVE_TOLERANCE: f64 = 1e-9;
/// Weight of the start token's private direction.
const START_WEIGHT: f64 = 1.0;

/// A constructed model with the constants that pin it down.
#[derive(Clone, Debug)]
pub struct Construction {
    pub params: ModelParams,
    pub provenance: Value,
}

/// The constructed layer plus its readout head.
pub(crate) struct ExactLayer {
    pub layer: LayerParams,
    pub head: Matrix,
    pub provenance: Value,
}

/// Places a gadget's units into a wider layer: `input_map[j]` is the layer
/// input feeding gadget input `j`.
struct LayerBuilder {
    in_dim: usize,
    hidden_w: Vec<Vec<f64>>,
    hidden_b: Vec<f64>,
    /// `(output row, hidden unit, weight)`.
    out: Vec<(usize, usize, f64)>,
    out_b: Vec<f64>,
}

impl LayerBuilder {
    fn new(in_dim: usize, out_dim: usize) -> Self {
        LayerBuilder { in_dim, hidden_w: vec![], hidden_b: vec![], out: vec![], out_b: vec![0.0; out_dim] }
    }

    /// Adds the gadget with hidden rows pre-multiplied by `proj` (gadget_in × in_dim).
    fn add_projected(&mut self, g: &GadgetMlp, proj: &Matrix, out_rows: &[usize]) {
        let base = self.hidden_w.len();
        let w = g.hidden.w.matmul(proj);
        for i in 0..g.width() {
            self.hidden_w.push(w.row(i).to_vec());
            self.hidden_b.push(g.hidden.b[(i, 0)]);
        }
        for (o, &row) in out_rows.iter().enumerate() {
            for i in 0..g.width() {
                let c = g.out.w[(o, i)];
                if c != 0.0 {
                    self.out.push((row, base + i, c));
                }
            }
            self.out_b[row] += g.out.b[(o, 0)];
        }
    }

    fn add(&mut self, g: &GadgetMlp, input_map: &[usize], out_rows: &[usize]) {
        let mut proj = Matrix::zeros(input_map.len(), self.in_dim);
        for (j, &src) in input_map.iter().enumerate() {
            proj[(j, src)] = 1.0;
        }
        self.add_projected(g, &proj, out_rows);
    }

    fn finish(self) -> (Dense, Dense) {
        let width = self.hidden_w.len();
        let hw = Matrix::from_rows(&self.hidden_w).expect("consistent rows");
        let mut ow = Matrix::zeros(self.out_b.len(), width);
        for (r, u, c) in self.out {
            ow[(r, u)] += c;
        }
        (Dense::new(hw, self.hidden_b), Dense::new(ow, self.out_b))
    }
}

/// Score matrix key × query through `W_K`, `W_Q`.
fn scores(table: &Matrix, wk: &Matrix, wq: &Matrix) -> Matrix {
    wk.matmul(table).t_matmul(&wq.matmul(table))
}

/// `(t, d)` fed to the output stage for each slot; the start token behaves
/// like a close at depth 0.
fn slot_label(k: usize, tok: usize, dep: usize) -> (usize, usize) {
    if tok == 2 * k + 1 {
        (2, 0)
    } else {
        (tok, dep)
    }
}

pub(crate) fn exact_layer(grammar: &GrammarParams, table: &Matrix, wk: &Matrix, wq: &Matrix, rng: &mut Rng) -> Result<ExactLayer> {
    grammar.validate()?;
    let (k, dd) = (grammar.k, grammar.d);
    let m = table.rows();
    let n_slots = 2 * k * dd + 1;
    if table.cols() != n_slots {
        return input(format!("embedding table needs {n_slots} columns, got {}", table.cols()));
    }
    if wk.cols() != m || wq.cols() != m || wk.rows() != wq.rows() {
        return input("W_K and W_Q must both be m_a × m");
    }
    if rank(table, 1e-10) < n_slots {
        return input("embeddings are not linearly independent");
    }
    let need = k * dd + k + 3;
    if m < need {
        return capacity(format!("construction needs m ≥ {need}, got {m}"));
    }
    let probe = LayerParams { wq: wq.clone(), wk: wk.clone(), wv: Matrix::zeros(m, m), ffn: vec![] };
    let bm = BalanceModel::new(k, dd, table, &probe)?;
    let residual = balance_residual(&bm);
    if residual > BALANCE_TOLERANCE {
        return input(format!("balance residual {residual:e} exceeds {BALANCE_TOLERANCE:e}"));
    }
    let sc = scores(table, wk, wq);
    let slot = |tok: usize, dep: usize| embedding_slot(k, dd, tok, dep);
    let start = n_slots - 1;

    // Close queries that read the stack: post-depth 1..D−1.
    let queries: Vec<usize> = (1..=k).flat_map(|j| (1..dd).map(move |d| (j, d))).map(|(j, d)| slot(close_token(j), d)).collect();
    let a_queries: Vec<usize> =
        if queries.is_empty() { (1..=k).map(|j| slot(close_token(j), 0)).collect() } else { queries.clone() };
    let mut a = vec![vec![0.0; dd + 1]; k + 1];
    for i in 1..=k {
        for dp in 1..=dd {
            let (o, c) = (slot(open_token(i), dp), slot(close_token(i), dp - 1));
            a[i][dp] = a_queries.iter().map(|&q| sc[(o, q)] - sc[(c, q)]).sum::<f64>() / a_queries.len() as f64;
        }
    }

    // Readout direction separating every pair of embeddings.
    let cols: Vec<Vec<f64>> = (0..n_slots).map(|s| table.column(s)).collect();
    let mut diffs = Vec::new();
    for i in 0..n_slots {
        for j in 0..i {
            diffs.push(cols[i].iter().zip(&cols[j]).map(|(x, y)| x - y).collect::<Vec<f64>>());
        }
    }
    let (v, v_margin) = readout_direction(&diffs, m, rng)?;
    let ones = vec![1.0 / (m as f64).sqrt(); m];
    let mut fixed = orthonormalize(&[ones, v.clone()], 1e-9);
    if fixed.len() < 2 {
        return input("readout direction is parallel to the all-ones vector");
    }
    let b0 = random_orthonormal_complement(m, &fixed, 1, rng)?.remove(0);
    fixed.push(b0.clone());
    // b[t][d]: block d also avoids the close embeddings at post-depth d, so
    // the residual term of a close query does not leak into its own block.
    let mut b = vec![vec![Vec::new(); dd + 1]; k + 1];
    for d in 1..=dd {
        let mut avoid = fixed.clone();
        if d < dd {
            avoid.extend((1..=k).map(|j| cols[slot(close_token(j), d)].clone()));
        }
        let avoid = orthonormalize(&avoid, 1e-9);
        let block = random_orthonormal_complement(m, &avoid, k, rng)?;
        for (t, vec) in block.into_iter().enumerate() {
            fixed.push(vec.clone());
            b[t + 1][d] = vec;
        }
    }

    let mut o = Matrix::zeros(m, n_slots);
    for t in 1..=k {
        for d in 1..=dd {
            o.set_column(slot(open_token(t), d), &b[t][d]);
            let neg: Vec<f64> = b[t][d].iter().map(|x| -a[t][d].exp() * x).collect();
            o.set_column(slot(close_token(t), d - 1), &neg);
        }
    }
    o.set_column(start, &b0.iter().map(|x| START_WEIGHT * x).collect::<Vec<f64>>());
    let (wv, solve_residual) = solve_right(table, &o)?;
    if solve_residual > SOLVE_TOLERANCE {
        return input(format!("W_V solve residual {solve_residual:e} exceeds {SOLVE_TOLERANCE:e}"));
    }

    // Smallest top-of-stack coordinate after normalization, over reading queries.
    let open_keys: Vec<usize> = (1..=k).flat_map(|t| (1..=dd).map(move |d| (t, d))).map(|(t, d)| slot(open_token(t), d)).collect();
    let (mut lo, mut hi, mut s0) = (f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &q in &queries {
        for &key in &open_keys {
            lo = lo.min(sc[(key, q)]);
            hi = hi.max(sc[(key, q)]);
        }
        s0 = s0.max(sc[(start, q)]);
    }
    let m_arg = if queries.is_empty() {
        1.0
    } else {
        let norm = (dd as f64 * (2.0 * hi).exp() + (START_WEIGHT * s0.exp()).powi(2)).sqrt();
        0.5 * lo.exp() / norm
    };
    let m_idx = ((k * (k + 1)) as f64 / 2.0).max((k + 1) as f64);

    // Layers 1–2.
    let labels = slot_inputs(k, dd);
    let stage_a_points: Vec<(Vec<f64>, Vec<f64>)> = labels
        .iter()
        .enumerate()
        .map(|(s, &(tok, dep))| {
            let (t, d) = slot_label(k, tok, dep);
            (vec![dot(&v, &cols[s])], vec![t as f64, d as f64])
        })
        .collect();
    let interp = interpolating_mlp_along(&stage_a_points, &[1.0])?;
    let mut l12 = LayerBuilder::new(m, dd + 2);
    l12.add_projected(&interp, &Matrix::from_rows(std::slice::from_ref(&v))?, &[0, 1]);
    let arg = argmax_mlp(k, m_arg)?;
    for d in 1..=dd {
        let proj = Matrix::from_rows(&(1..=k).map(|t| b[t][d].clone()).collect::<Vec<_>>())?;
        l12.add_projected(&arg, &proj, &[1 + d]);
    }
    let (f1, f2) = l12.finish();

    // Layers 3–4.
    let mut l34 = LayerBuilder::new(dd + 2, 3);
    l34.add(&exact_linear_mlp(&Matrix::identity(2))?, &[0, 1], &[0, 1]);
    let mut idx_map: Vec<usize> = (2..dd + 2).collect();
    idx_map.push(1);
    l34.add(&indexing_mlp(dd, m_idx)?, &idx_map, &[2]);
    let (f3, f4) = l34.finish();

    // Layers 5–6: per token type, the distribution as a function of (d, y).
    let dist = |stack_top: Option<usize>, depth: usize| {
        let mut s = BracketStack::new();
        if let Some(top) = stack_top {
            for _ in 1..depth {
                s.push(open_token(1), usize::MAX);
            }
            s.push(open_token(top), usize::MAX);
        }
        s.next_distribution(grammar)
    };
    let mut per_token = Vec::with_capacity(2 * k);
    for tok in 1..=2 * k {
        // A close leaves depth < D, so its distribution depends only on y.
        let g = if tok % 2 == 1 {
            let t = tok.div_ceil(2);
            let pts: Vec<(Vec<f64>, Vec<f64>)> = (1..=dd).map(|d| (vec![d as f64, 0.0], dist(Some(t), d))).collect();
            interpolating_mlp_along(&pts, &[1.0, 0.0])?
        } else {
            let mut pts: Vec<(Vec<f64>, Vec<f64>)> =
                (1..=k).map(|y| (vec![0.0, y as f64], dist(Some(y), 1))).collect();
            pts.push((vec![0.0, m_idx], dist(None, 0)));
            interpolating_mlp_along(&pts, &[0.0, 1.0])?
        };
        per_token.push(g);
    }
    let bound = (dd as f64).max(m_idx);
    let choose = choose_function_mlp(&per_token, bound)?;
    let mut l56 = LayerBuilder::new(3, m);
    l56.add(&choose, &[0, 1, 2], &(0..2 * k).collect::<Vec<_>>());
    let (f5, f6) = l56.finish();

    let mut head = Matrix::zeros(2 * k, m);
    for i in 0..2 * k {
        head[(i, i)] = 1.0;
    }
    let provenance = json!({
        "k": k,
        "depth": dd,
        "q": grammar.q,
        "dim": m,
        "balance_residual": residual,
        "wv_solve_residual": solve_residual,
        "readout_margin": v_margin,
        "interp_gamma": 0.5 * (interp.hidden.b[(0, 0)] - interp.hidden.b[(1, 0)]),
        "argmax_threshold": m_arg,
        "index_bound": m_idx,
        "choose_domain": bound,
        "ffn_widths": [f1.out_dim(), f3.out_dim(), f5.out_dim()],
    });
    Ok(ExactLayer {
        layer: LayerParams { wq: wq.clone(), wk: wk.clone(), wv, ffn: vec![f1, f2, f3, f4, f5, f6] },
        head,
        provenance,
    })
}

/// Configuration shared by constructed models: no residual around `g`,
/// `C_LN = 0`, no head bias.
pub(crate) fn construction_config(base: ModelConfig, ffn_width: usize) -> ModelConfig {
    ModelConfig { ffn_depth: 6, ffn_width, ffn_residual: false, ln_c: 0.0, head_bias: false, ..base }
}

/// Minimal-first-layer model whose next-token output is the exact
/// distribution. `table` has one column per embedding slot; `W_K`, `W_Q` must
/// satisfy the balance condition.
pub fn build_theorem1_model(grammar: &GrammarParams, table: &Matrix, wk: &Matrix, wq: &Matrix, seed: u64) -> Result<Construction> {
    let mut rng = Rng::stream(seed, 7);
    let ex = exact_layer(grammar, table, wk, wq, &mut rng)?;
    let (k, dd, m) = (grammar.k, grammar.d, table.rows());
    let kind = [EmbeddingKind::OnehotJoint, EmbeddingKind::OnehotConcat, EmbeddingKind::TrigConcat]
        .into_iter()
        .find(|&kind| embedding_table(kind, k, dd, m).is_ok_and(|t| &t == table))
        .unwrap_or(EmbeddingKind::OnehotJoint);
    let width = ex.layer.ffn.iter().map(|f| f.out_dim()).max().unwrap_or(m);
    let base = ModelConfig {
        attn_dim: wk.rows(),
        frozen_uniform_attention: wk.max_abs() == 0.0 && wq.max_abs() == 0.0,
        ..ModelConfig::minimal(k, dd, kind)
    };
    let config = ModelConfig { dim: m, ..construction_config(base, width) };
    let params = ModelParams { config, embed: table.clone(), layers: vec![ex.layer], head_w: ex.head, head_b: None };
    params.check_shapes()?;
    let mut provenance = ex.provenance;
    provenance["construction"] = json!("balanced_second_layer");
    provenance["seed"] = json!(seed);
    provenance["embedding"] = json!(kind);
    Ok(Construction { params, provenance })
}

/// Rank-one scores `κ vᵀ` with `κ` orthogonal to every matched-pair
/// difference, so the balance condition holds while attention is not uniform.
pub fn balanced_qk_sampler(k: usize, depth: usize, table: &Matrix, attn_dim: usize, rng: &mut Rng) -> Result<(Matrix, Matrix)> {
    let m = table.rows();
    if table.cols() != 2 * k * depth + 1 || attn_dim == 0 {
        return input("embedding table does not match (k, D) or attn_dim is zero");
    }
    let slot = |tok: usize, dep: usize| embedding_slot(k, depth, tok, dep);
    let diffs: Vec<Vec<f64>> = (1..=k)
        .flat_map(|i| (1..=depth).map(move |d| (i, d)))
        .map(|(i, d)| {
            let (o, c) = (table.column(slot(open_token(i), d)), table.column(slot(close_token(i), d - 1)));
            o.iter().zip(&c).map(|(x, y)| x - y).collect()
        })
        .collect();
    let span = orthonormalize(&diffs, 1e-9);
    if span.len() >= m {
        return capacity("matched-pair differences span the embedding space");
    }
    for _ in 0..64 {
        let kappa = random_orthonormal_complement(m, &span, 1, rng)?.remove(0);
        let v = rng.unit_vector(m);
        let ks: Vec<f64> = (0..table.cols()).map(|s| dot(&kappa, &table.column(s))).collect();
        let vs: Vec<f64> = (0..table.cols()).map(|s| dot(&v, &table.column(s))).collect();
        let peak = ks.iter().fold(0.0f64, |a, x| a.max(x.abs())) * vs.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        if peak < 1e-6 {
            continue;
        }
        let scale = 1.5 / peak;
        let mut wk = Matrix::zeros(attn_dim, m);
        let mut wq = Matrix::zeros(attn_dim, m);
        wk.row_mut(0).iter_mut().zip(&kappa).for_each(|(w, x)| *w = x * scale.sqrt());
        wq.row_mut(0).iter_mut().zip(&v).for_each(|(w, x)| *w = x * scale.sqrt());
        let sc = scores(table, &wk, &wq);
        let (lo, hi) = sc.data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
        if hi - lo > 0.1 {
            return Ok((wk, wq));
        }
    }
    capacity("could not find a non-uniform balanced score matrix")
}

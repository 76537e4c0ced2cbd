//! Balance diagnostics for the attention layer that reads minimal (type, depth)
//! embeddings.
//!
//! `u(key, query) = P⊥ exp(e_keyᵀ W_Kᵀ W_Q e_query) W_V e_key`: the key token is
//! the attended one, the query is the final token.

use crate::dyck::{close_token, open_token, BracketStack, GrammarParams};
use crate::error::{capacity, input, Error, Result};
use crate::numerics::ops::center;
use crate::numerics::{norm2, Matrix, Rng};
use crate::transformer::params::{embedding_slot, LayerParams, ModelParams};
use serde::Serialize;

pub fn u_term(e_key: &[f64], e_query: &[f64], wk: &Matrix, wq: &Matrix, wv: &Matrix) -> Vec<f64> {
    let s = crate::numerics::dot(&wk.matvec(e_key), &wq.matvec(e_query));
    let v: Vec<f64> = wv.matvec(e_key).into_iter().map(|x| x * s.exp()).collect();
    center(&v)
}

/// One attention layer over a (type, depth) embedding table, with all
/// pairwise scores and centered values precomputed.
#[derive(Clone, Debug)]
pub struct BalanceModel {
    pub k: usize,
    pub depth: usize,
    pub table: Matrix,
    scores: Matrix,
    values: Matrix,
}

impl BalanceModel {
    pub fn new(k: usize, depth: usize, table: &Matrix, layer: &LayerParams) -> Result<Self> {
        if table.cols() != 2 * k * depth + 1 || table.rows() != layer.wv.cols() {
            return input("embedding table does not match the layer");
        }
        let kk = layer.wk.matmul(table);
        let qq = layer.wq.matmul(table);
        let scores = kk.t_matmul(&qq);
        let mut values = layer.wv.matmul(table);
        for j in 0..values.cols() {
            let c = center(&values.column(j));
            values.set_column(j, &c);
        }
        Ok(BalanceModel { k, depth, table: table.clone(), scores, values })
    }

    /// The single trainable layer of a minimal-mode model.
    pub fn from_minimal(params: &ModelParams) -> Result<Self> {
        let c = &params.config;
        if !c.is_minimal() {
            return input("balance diagnostics need a minimal-first-layer model");
        }
        Self::new(c.k, c.depth, &params.embed, &params.layers[0])
    }

    pub fn slot(&self, token: usize, depth: usize) -> usize {
        embedding_slot(self.k, self.depth, token, depth)
    }

    pub fn start_slot(&self) -> usize {
        2 * self.k * self.depth
    }

    pub fn score(&self, key: usize, query: usize) -> f64 {
        self.scores[(key, query)]
    }

    /// `u` by slot.
    pub fn u(&self, key: usize, query: usize) -> Vec<f64> {
        let w = self.scores[(key, query)].exp();
        self.values.column(key).into_iter().map(|v| v * w).collect()
    }

    /// Centered unnormalized attention output at the last position of `prefix`.
    pub fn unnormalized_output(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        if BracketStack::replay(prefix, self.depth).is_none() {
            return Err(Error::Domain("not a valid bounded-depth prefix".into()));
        }
        let slots = self.slots_of(prefix);
        let q = *slots.last().expect("start slot");
        let mut acc = vec![0.0; self.values.rows()];
        for &s in &slots {
            for (a, v) in acc.iter_mut().zip(self.u(s, q)) {
                *a += v;
            }
        }
        Ok(acc)
    }

    fn slots_of(&self, prefix: &[usize]) -> Vec<usize> {
        let mut out = vec![self.start_slot()];
        let depths = crate::dyck::depth_profile(prefix);
        out.extend(prefix.iter().zip(depths).map(|(&t, d)| self.slot(t, d as usize)));
        out
    }
}

/// Largest spread, over close-bracket queries at depths `1..D`, of the score
/// difference between a matched open and close of each type and depth.
pub fn balance_residual(m: &BalanceModel) -> f64 {
    let queries: Vec<usize> =
        (1..=m.k).flat_map(|j| (1..m.depth).map(move |d| (j, d))).map(|(j, d)| m.slot(close_token(j), d)).collect();
    let mut worst = 0.0f64;
    for i in 1..=m.k {
        for dp in 1..=m.depth {
            let (o, c) = (m.slot(open_token(i), dp), m.slot(close_token(i), dp - 1));
            let vals: Vec<f64> = queries.iter().map(|&q| m.score(o, q) - m.score(c, q)).collect();
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi >= lo {
                worst = worst.max(hi - lo);
            }
        }
    }
    worst
}

/// Contribution of a matched pair of type `i` at depth `dp` to the final
/// position when the last token closes type `j` down to depth `d − 1`.
pub fn s_metric(m: &BalanceModel, d: usize, dp: usize, i: usize, j: usize) -> Result<Vec<f64>> {
    if !(1..=m.depth).contains(&d) || !(1..=m.depth).contains(&dp) || !(1..=m.k).contains(&i) || !(1..=m.k).contains(&j) {
        return input(format!("S index out of range: d={d} d'={dp} i={i} j={j}"));
    }
    let q = m.slot(close_token(j), d - 1);
    let a = m.u(m.slot(close_token(i), dp - 1), q);
    let b = m.u(m.slot(open_token(i), dp), q);
    Ok(a.iter().zip(&b).map(|(x, y)| x + y).collect())
}

/// Unnormalized output on `opens ⊕ open_i close_i`, with `opens` the bracket
/// types of the `d − 1` unmatched opens below.
pub fn q_vector(m: &BalanceModel, i: usize, d: usize, opens: &[usize]) -> Result<Vec<f64>> {
    if !(1..=m.depth).contains(&d) || opens.len() + 1 != d || !(1..=m.k).contains(&i) {
        return input("Q needs d in 1..=D and d − 1 open types");
    }
    if let Some(&t) = opens.iter().find(|&&t| t == 0 || t > m.k) {
        return input(format!("bracket type {t} out of range"));
    }
    let q = m.slot(close_token(i), d - 1);
    let mut keys = vec![m.start_slot()];
    keys.extend(opens.iter().enumerate().map(|(s, &t)| m.slot(open_token(t), s + 1)));
    keys.push(m.slot(open_token(i), d));
    keys.push(q);
    let mut acc = vec![0.0; m.values.rows()];
    for key in keys {
        for (a, v) in acc.iter_mut().zip(m.u(key, q)) {
            *a += v;
        }
    }
    Ok(acc)
}

const P_SEARCH_CAP: usize = 1_000_000;

/// `‖Q(j, d, t′)‖` where `t` minimizes `‖Q‖` and `t′` minimizes it among
/// sequences whose last entry differs from `t`'s.
pub fn p_metric(m: &BalanceModel, d: usize, j: usize) -> Result<f64> {
    if d < 2 || d > m.depth || m.k < 2 {
        return input("P needs 2 ≤ d ≤ D and k ≥ 2");
    }
    let n = (d - 1) as u32;
    let total = m.k.checked_pow(n).filter(|&t| t <= P_SEARCH_CAP);
    let Some(total) = total else {
        return capacity(format!("P search over {}^{} sequences", m.k, n));
    };
    let mut norms = Vec::with_capacity(total);
    let mut seqs = Vec::with_capacity(total);
    for code in 0..total {
        let mut c = code;
        let seq: Vec<usize> = (0..n)
            .map(|_| {
                let t = 1 + c % m.k;
                c /= m.k;
                t
            })
            .collect();
        norms.push(norm2(&q_vector(m, j, d, &seq)?));
        seqs.push(seq);
    }
    let best = (0..total).fold(0, |b, x| if norms[x] < norms[b] { x } else { b });
    let last = *seqs[best].last().expect("d ≥ 2");
    let alt = (0..total)
        .filter(|&x| *seqs[x].last().expect("d ≥ 2") != last)
        .fold(None, |b: Option<usize>, x| match b {
            Some(b) if norms[b] <= norms[x] => Some(b),
            _ => Some(x),
        })
        .expect("k ≥ 2 leaves an alternative");
    Ok(norms[alt])
}

#[derive(Clone, Debug, Serialize)]
pub struct SEntry {
    pub d: usize,
    pub d_prime: usize,
    pub i: usize,
    pub j: usize,
    pub norm: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PEntry {
    pub d: usize,
    pub j: usize,
    pub p: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BalanceReport {
    pub residual: f64,
    pub s_table: Vec<SEntry>,
    pub p_table: Vec<PEntry>,
    pub beta: f64,
    /// Tuples left out of β because their `P` is zero.
    pub skipped: usize,
    pub worst: Option<SEntry>,
}

/// Full tables and β over `d ∈ 2..=D`, `d′ ∈ 1..=D`, `i, j ∈ 1..=k`.
pub fn balance_report(m: &BalanceModel) -> Result<BalanceReport> {
    let mut s_table = Vec::new();
    let mut p_table = Vec::new();
    let mut sum = 0.0;
    let mut used = 0usize;
    let mut skipped = 0usize;
    let mut worst: Option<(f64, SEntry)> = None;
    for d in 2..=m.depth {
        for j in 1..=m.k {
            let p = p_metric(m, d, j)?;
            p_table.push(PEntry { d, j, p });
            for dp in 1..=m.depth {
                for i in 1..=m.k {
                    let norm = norm2(&s_metric(m, d, dp, i, j)?);
                    let e = SEntry { d, d_prime: dp, i, j, norm };
                    if p > 0.0 {
                        let r = norm / p;
                        sum += r;
                        used += 1;
                        if worst.as_ref().is_none_or(|(w, _)| r > *w) {
                            worst = Some((r, e.clone()));
                        }
                    } else {
                        skipped += 1;
                    }
                    s_table.push(e);
                }
            }
        }
    }
    if used == 0 {
        return Err(Error::Domain("every P is zero; β is undefined".into()));
    }
    Ok(BalanceReport {
        residual: balance_residual(m),
        s_table,
        p_table,
        beta: sum / used as f64,
        skipped,
        worst: worst.map(|(_, e)| e),
    })
}

/// β of a minimal-mode model.
pub fn beta(params: &ModelParams) -> Result<f64> {
    Ok(balance_report(&BalanceModel::from_minimal(params)?)?.beta)
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepPoint {
    pub length: usize,
    pub max_ratio: f64,
    pub probes: usize,
}

/// For each length `N`, samples prefixes of `N` tokens that end in a close
/// to depth ≥ 1, inserts one matched pair at a random valid position, and
/// records the largest `‖Δ output‖ / P_{d,j}`.
pub fn n_sweep(
    m: &BalanceModel,
    lengths: &[usize],
    probes: usize,
    q: f64,
    rng: &mut Rng,
) -> Result<Vec<SweepPoint>> {
    let grammar = GrammarParams::new(m.k, m.depth, 1, q)?;
    let mut out = Vec::with_capacity(lengths.len());
    for &n in lengths {
        let mut max_ratio = 0.0f64;
        let mut done = 0;
        let mut attempts = 0usize;
        while done < probes {
            attempts += 1;
            if attempts > 1000 * probes.max(1) {
                return capacity(format!("no probe of length {n} ends in a close above depth 0"));
            }
            let p = crate::dyck::sample_prefix_of_length(&grammar, n, rng);
            let toks = p.tokens();
            let Some(&last) = toks.last() else { continue };
            let dl = *p.depths().last().expect("nonempty");
            if last % 2 == 1 || dl == 0 {
                continue;
            }
            let (d, j) = (dl + 1, last / 2);
            let pm = p_metric(m, d, j)?;
            // Insert a pair after position `at` (before the final token).
            let at = rng.below(toks.len());
            let dep = if at == 0 { 0 } else { p.depths()[at - 1] };
            if dep >= m.depth {
                continue;
            }
            let t = 1 + rng.below(m.k);
            let mut ins = toks[..at].to_vec();
            ins.extend([open_token(t), close_token(t)]);
            ins.extend_from_slice(&toks[at..]);
            let a = m.unnormalized_output(toks)?;
            let b = m.unnormalized_output(&ins)?;
            let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            if pm > 0.0 {
                max_ratio = max_ratio.max(norm2(&diff) / pm);
            } else if norm2(&diff) > 0.0 {
                max_ratio = f64::INFINITY;
            }
            done += 1;
        }
        out.push(SweepPoint { length: n, max_ratio, probes });
    }
    Ok(out)
}

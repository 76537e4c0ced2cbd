use super::config::{ArchVariant, PositionalEncoding};
use super::params::{embedding_slot, ModelParams};
use crate::dyck::{depth_profile, BracketStack};
use crate::error::{Error, Result};
use crate::numerics::tape::{Block, Tape, Var};
use crate::numerics::Matrix;

/// Everything a forward pass exposes for one sequence. Column `j` is position
/// `j` with the start token at column 0; logits at column `j` predict token `j+1`.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub logits: Matrix,
    /// Per layer, entry `(i, j)` is the weight of key `i` for query `j`.
    pub patterns: Vec<Matrix>,
    /// `X⁽⁰⁾ … X⁽ᴸ⁾`.
    pub hidden: Vec<Matrix>,
    /// Per layer, the unnormalized attention output `W_V X σ(KᵀQ)`.
    pub attn_outputs: Vec<Matrix>,
}

pub(crate) struct Graph {
    pub logits: Var,
    pub attn: Vec<Var>,
    pub hidden: Vec<Var>,
    pub blocks: Vec<Block>,
}

/// Rejects anything that is not a prefix of a depth-bounded Dyck word.
pub fn check_prefix(params: &ModelParams, prefix: &[usize]) -> Result<()> {
    let c = &params.config;
    if let Some(&t) = prefix.iter().find(|&&t| t == 0 || t > 2 * c.k) {
        return Err(Error::Domain(format!("token {t} outside 1..={}", 2 * c.k)));
    }
    if BracketStack::replay(prefix, c.depth).is_none() {
        return Err(Error::Domain("not a valid bounded-depth prefix".into()));
    }
    Ok(())
}

/// Builds the forward graph for a column-concatenated batch. Trainable tensors
/// become parameter slots (numbered as in `named_tensors`) when `train` is set.
pub(crate) fn build_graph(tape: &mut Tape, params: &ModelParams, seqs: &[&[usize]], train: bool) -> Graph {
    let c = &params.config;
    let total: usize = seqs.iter().map(|s| s.len() + 1).sum();
    let mut blocks = Vec::with_capacity(seqs.len());
    let mut ids = Vec::with_capacity(total);
    let start = 2 * c.k + 1;
    for s in seqs {
        blocks.push(Block { start: ids.len(), len: s.len() + 1 });
        if c.is_minimal() {
            ids.push(embedding_slot(c.k, c.depth, start, 0));
            let depths = depth_profile(s);
            for (&t, &d) in s.iter().zip(&depths) {
                ids.push(embedding_slot(c.k, c.depth, t, d as usize));
            }
        } else {
            ids.push(start - 1);
            ids.extend(s.iter().map(|&t| t - 1));
        }
    }

    let mut slot = 0usize;
    let qk_trainable = !c.frozen_uniform_attention;
    let mut leaf = |tape: &mut Tape, m: &Matrix, trainable: bool| {
        let v = if train && trainable { tape.param(slot, m.clone()) } else { tape.constant(m.clone()) };
        slot += 1;
        v
    };

    let table = leaf(tape, &params.embed, !c.is_minimal());
    let mut x = tape.gather(table, ids);
    if let PositionalEncoding::Linear { t_max } = c.positional {
        let mut pe = Matrix::zeros(c.dim, total);
        for b in &blocks {
            for i in 0..b.len {
                pe[(c.dim - 1, b.start + i)] = (i + 1) as f64 / t_max;
            }
        }
        let pe = tape.constant(pe);
        x = tape.add(x, pe);
    }

    let mut hidden = vec![x];
    let mut attn = Vec::with_capacity(c.layers);
    for layer in &params.layers {
        let wq = leaf(tape, &layer.wq, qk_trainable);
        let wk = leaf(tape, &layer.wk, qk_trainable);
        let wv = leaf(tape, &layer.wv, true);
        let q = tape.matmul(wq, x);
        let k = tape.matmul(wk, x);
        let v = tape.matmul(wv, x);
        let a = tape.attention(k, q, v, blocks.clone());
        let h = match c.arch {
            ArchVariant::Paper => {
                let n = tape.layernorm(a, c.ln_c);
                tape.add(n, x)
            }
            ArchVariant::Gpt2 => {
                let s = tape.add(a, x);
                tape.layernorm(s, c.ln_c)
            }
        };
        let mut y = h;
        let depth = layer.ffn.len();
        for (i, d) in layer.ffn.iter().enumerate() {
            let w = leaf(tape, &d.w, true);
            let b = leaf(tape, &d.b, true);
            y = tape.affine(w, y, Some(b));
            if i + 1 < depth {
                y = tape.relu(y);
            }
        }
        if c.ffn_residual {
            y = tape.add(y, h);
        }
        attn.push(a);
        x = y;
        hidden.push(x);
    }
    let hw = leaf(tape, &params.head_w, true);
    let hb = params.head_b.as_ref().map(|b| leaf(tape, b, true));
    let logits = tape.affine(hw, x, hb);
    Graph { logits, attn, hidden, blocks }
}

/// Full forward pass on one prefix.
pub fn forward(params: &ModelParams, prefix: &[usize]) -> Result<ForwardOutput> {
    check_prefix(params, prefix)?;
    let mut tape = Tape::new();
    let g = build_graph(&mut tape, params, &[prefix], false);
    Ok(ForwardOutput {
        logits: tape.value(g.logits).clone(),
        patterns: g.attn.iter().map(|&a| tape.attention_probs(a).expect("attention node")[0].clone()).collect(),
        hidden: g.hidden.iter().map(|&h| tape.value(h).clone()).collect(),
        attn_outputs: g.attn.iter().map(|&a| tape.value(a).clone()).collect(),
    })
}

/// Attention patterns only, one per layer.
pub fn attention_patterns(params: &ModelParams, prefix: &[usize]) -> Result<Vec<Matrix>> {
    Ok(forward(params, prefix)?.patterns)
}

const COLUMN_BUDGET: usize = 4096;

/// Output vector at the final position of every prefix (the prediction for
/// the token after it), batched internally.
pub fn final_outputs(params: &ModelParams, prefixes: &[&[usize]]) -> Result<Vec<Vec<f64>>> {
    for p in prefixes {
        check_prefix(params, p)?;
    }
    let mut out = Vec::with_capacity(prefixes.len());
    let mut i = 0;
    while i < prefixes.len() {
        let mut j = i;
        let mut cols = 0;
        while j < prefixes.len() && (j == i || cols + prefixes[j].len() < COLUMN_BUDGET) {
            cols += prefixes[j].len() + 1;
            j += 1;
        }
        let mut tape = Tape::new();
        let g = build_graph(&mut tape, params, &prefixes[i..j], false);
        let l = tape.value(g.logits);
        for b in &g.blocks {
            out.push(l.column(b.start + b.len - 1));
        }
        i = j;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyck::{enumerate_prefixes, GrammarParams};
    use crate::numerics::Rng;
    use crate::transformer::config::{EmbeddingKind, ModelConfig};

    fn small() -> ModelConfig {
        ModelConfig { dim: 8, attn_dim: 5, ffn_width: 7, ..Default::default() }
    }

    #[test]
    fn zero_head_gives_zero_logits() {
        let mut p = ModelParams::init(&small(), &mut Rng::seed(1)).unwrap();
        p.head_w = Matrix::zeros(4, 8);
        p.head_b = Some(Matrix::zeros(4, 1));
        let out = forward(&p, &[1, 3, 4, 2, 1]).unwrap();
        assert_eq!(out.logits.max_abs(), 0.0);
        assert!(out.patterns[1].max_abs() > 0.0);
    }

    #[test]
    fn zero_scores_give_uniform_patterns() {
        let mut p = ModelParams::init(&small(), &mut Rng::seed(2)).unwrap();
        for l in &mut p.layers {
            l.wq = Matrix::zeros(5, 8);
            l.wk = Matrix::zeros(5, 8);
        }
        let out = forward(&p, &[3, 1, 2, 4, 1, 1]).unwrap();
        for a in &out.patterns {
            for j in 0..a.cols() {
                for i in 0..a.rows() {
                    let want = if i <= j { 1.0 / (j + 1) as f64 } else { 0.0 };
                    assert!((a[(i, j)] - want).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn patterns_are_causal_distributions_and_deterministic() {
        let p = ModelParams::init(&small(), &mut Rng::seed(4)).unwrap();
        let prefix = [1, 1, 2, 3, 4, 2];
        let a = forward(&p, &prefix).unwrap();
        let b = forward(&p, &prefix).unwrap();
        assert_eq!(a.logits.data(), b.logits.data());
        assert_eq!(a.logits.shape(), (4, 7));
        for pat in &a.patterns {
            for j in 0..7 {
                let s: f64 = pat.column(j).iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
                for i in 0..7 {
                    assert!((0.0..=1.0).contains(&pat[(i, j)]));
                    if i > j {
                        assert_eq!(pat[(i, j)], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn invalid_prefix_is_a_domain_error() {
        let p = ModelParams::init(&small(), &mut Rng::seed(5)).unwrap();
        assert!(matches!(forward(&p, &[2]), Err(Error::Domain(_))));
        assert!(matches!(forward(&p, &[1, 4]), Err(Error::Domain(_))));
        assert!(matches!(forward(&p, &[9]), Err(Error::Domain(_))));
    }

    #[test]
    fn batched_final_outputs_match_single_passes() {
        let p = ModelParams::init(&small(), &mut Rng::seed(6)).unwrap();
        let seqs: Vec<Vec<usize>> = vec![vec![], vec![1], vec![1, 3, 4], vec![3, 3, 4, 1, 2]];
        let refs: Vec<&[usize]> = seqs.iter().map(|s| s.as_slice()).collect();
        let batched = final_outputs(&p, &refs).unwrap();
        for (s, b) in seqs.iter().zip(&batched) {
            let single = forward(&p, s).unwrap();
            let col = single.logits.column(s.len());
            for (x, y) in col.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_minimal_model_sees_a_multiset() {
        // Zero scores over (type, depth) embeddings: the final output is a
        // function of the final token and the multiset of (token, depth) pairs.
        let mut cfg = ModelConfig::minimal(2, 3, EmbeddingKind::OnehotJoint);
        cfg.frozen_uniform_attention = true;
        let p = ModelParams::init(&cfg, &mut Rng::seed(7)).unwrap();
        let g = GrammarParams::new(2, 3, 6, 0.5).unwrap();
        let all = enumerate_prefixes(&g).unwrap();
        let refs: Vec<&[usize]> = all.iter().map(|p| p.tokens()).collect();
        let outs = final_outputs(&p, &refs).unwrap();
        type Key = ((usize, usize), Vec<(usize, usize)>);
        let mut seen: std::collections::HashMap<Key, Vec<f64>> = Default::default();
        let mut repeats = 0;
        for (pre, o) in all.iter().zip(&outs) {
            let mut pairs: Vec<(usize, usize)> =
                pre.tokens().iter().copied().zip(pre.depths().iter().copied()).collect();
            let last = *pairs.last().unwrap();
            pairs.sort_unstable();
            let key = (last, pairs);
            match seen.get(&key) {
                Some(prev) => {
                    repeats += 1;
                    for (a, b) in prev.iter().zip(o) {
                        assert!((a - b).abs() < 1e-9);
                    }
                }
                None => {
                    seen.insert(key, o.clone());
                }
            }
        }
        assert!(repeats > 20, "{repeats}");
    }
}

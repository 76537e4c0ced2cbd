//! Two layers, both with uniform causal attention and no positional encoding.
//!
//! Layer one averages `±1` per bracket plus a start channel, so after LayerNorm
//! the attention output encodes the depth alone; its MLP maps
//! `(token, depth)` onto one-hot joint embeddings. Layer two is the exact
//! balanced layer with zero scores.

use super::gadgets::interpolating_mlp;
use super::theorem1::{construction_config, exact_layer, Construction};
use crate::dyck::GrammarParams;
use crate::error::Result;
use crate::numerics::ops::layernorm_c;
use crate::numerics::{Matrix, Rng};
use crate::transformer::params::{embedding_table, slot_inputs, LayerParams, ModelParams};
use crate::transformer::{EmbeddingKind, FirstLayer, ModelConfig};
use serde_json::json;

pub fn build_uniform_attention_model(grammar: &GrammarParams, seed: u64) -> Result<Construction> {
    grammar.validate()?;
    let (k, dd) = (grammar.k, grammar.d);
    let m = 2 * k * dd + 1;
    let vocab_in = 2 * k + 1;
    let mut rng = Rng::stream(seed, 7);

    let mut embed = Matrix::zeros(m, vocab_in);
    for t in 0..vocab_in {
        embed[(t, t)] = 1.0;
    }
    // Row 0 counts depth, row 1 marks the start token.
    let mut wv = Matrix::zeros(m, m);
    for t in 0..2 * k {
        wv[(0, t)] = if t % 2 == 0 { 1.0 } else { -1.0 };
    }
    wv[(1, 2 * k)] = 1.0;

    let joint = embedding_table(EmbeddingKind::OnehotJoint, k, dd, m)?;
    let points: Vec<(Vec<f64>, Vec<f64>)> = slot_inputs(k, dd)
        .into_iter()
        .enumerate()
        .map(|(s, (tok, dep))| {
            let mut avg = vec![0.0; m];
            avg[0] = dep as f64;
            avg[1] = 1.0;
            let mut h = layernorm_c(&avg, 0.0);
            h[tok - 1] += 1.0;
            (h, joint.column(s))
        })
        .collect();
    let g1 = interpolating_mlp(&points, &mut rng)?;
    let zero = Matrix::zeros(m, m);
    let first = LayerParams { wq: zero.clone(), wk: zero.clone(), wv, ffn: vec![g1.hidden, g1.out] };
    let ex = exact_layer(grammar, &joint, &zero, &zero, &mut rng)?;
    let width = first.ffn.iter().chain(&ex.layer.ffn).map(|f| f.out_dim()).max().unwrap_or(m);
    let base = ModelConfig {
        k,
        depth: dd,
        layers: 2,
        dim: m,
        attn_dim: m,
        first_layer: FirstLayer::Standard,
        frozen_uniform_attention: true,
        ..ModelConfig::default()
    };
    let params = ModelParams {
        config: construction_config(base, width),
        embed,
        layers: vec![first, ex.layer],
        head_w: ex.head,
        head_b: None,
    };
    params.check_shapes()?;
    let mut provenance = json!({
        "construction": "uniform_attention",
        "seed": seed,
        "first_layer_width": points.len() * 2,
    });
    provenance["second_layer"] = ex.provenance;
    Ok(Construction { params, provenance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyck::{enumerate_prefixes, next_token_distribution, sample_prefix_of_length, total_variation};
    use crate::transformer::{attention_patterns, final_outputs};

    #[test]
    fn matches_oracle_with_uniform_patterns() {
        let g = GrammarParams::new(2, 3, 8, 0.5).unwrap();
        let c = build_uniform_attention_model(&g, 4).unwrap();
        let pre = enumerate_prefixes(&g).unwrap();
        let refs: Vec<&[usize]> = pre.iter().map(|p| p.tokens()).collect();
        let outs = final_outputs(&c.params, &refs).unwrap();
        for (p, o) in pre.iter().zip(outs) {
            let tv = total_variation(&o, &next_token_distribution(p, &g).unwrap());
            assert!(tv <= 1e-6, "{:?}: {tv}", p.tokens());
        }
        let mut r = Rng::seed(3);
        let long = sample_prefix_of_length(&g, 300, &mut r);
        let pats = attention_patterns(&c.params, long.tokens()).unwrap();
        for pat in pats {
            for j in [0, 10, 300] {
                for i in 0..=j {
                    assert!((pat[(i, j)] - 1.0 / (j + 1) as f64).abs() < 1e-12);
                }
            }
        }
        let o = final_outputs(&c.params, &[long.tokens()]).unwrap();
        assert!(total_variation(&o[0], &next_token_distribution(&long, &g).unwrap()) <= 1e-6);
    }
}
